"""Expansion pipeline: staged validation, conservation, checkpointing, stats."""

import json

import pytest

from conftest import make_doc, make_expanded, make_profile, profile_text
from toolde.backends import ScriptedGenerationBackend, TransientBackendError
from toolde.corpus import DOMAINS, FieldSelection, render_document_text, write_expanded_corpus
from toolde.errors import BackendUnavailable, ParseError, ValidationError
from toolde.pipeline import (
    PipelineConfig,
    ReviewBatch,
    ValidationResult,
    build_review_batch,
    parse_judgement,
    parse_profile_json,
    render_expansion_prompt,
    render_judgement_prompt,
    rule_check,
    run_pipeline,
    token_stats,
)
from toolde.prompts import load_template


def test_parse_profile_json_variants() -> None:
    wrapped = parse_profile_json('{"tool_profile": {"function": "f", "tags": ["a"]}}')
    assert wrapped is not None and wrapped.function == "f"
    bare = parse_profile_json('{"function": "f", "tags": ["a", "b"]}')
    assert bare is not None and bare.tags == ("a", "b")
    noisy = parse_profile_json('Sure, here it is:\n{"function": "f", "tags": ["a"]}\nDone!')
    assert noisy is not None and noisy.function == "f"
    assert parse_profile_json("no json here") is None
    assert parse_profile_json("{broken") is None
    assert parse_profile_json("[1, 2]") is None
    assert parse_profile_json('{"tool_profile": "not an object"}') is None


def test_rule_check_reasons() -> None:
    assert rule_check(None, "").reasons == ("empty_output",)
    assert rule_check(None, "  \n ").reasons == ("empty_output",)
    assert rule_check(None, "garbage").reasons == ("invalid_json",)
    assert rule_check(make_profile(), profile_text()).passed
    bad = make_profile(function="", tags=())
    assert set(rule_check(bad, "x").reasons) == {"missing_function", "missing_tags"}
    six_tags = make_profile(tags=tuple(f"t{i}" for i in range(6)))
    assert rule_check(six_tags, "x").reasons == ("tags_out_of_range",)
    assert rule_check(six_tags, "x", strict=False).passed


def test_validation_result_rejects_unknown_reasons() -> None:
    with pytest.raises(ValidationError):
        ValidationResult.from_reasons(["made_up_reason"])
    assert ValidationResult.from_reasons([]).passed


def test_render_expansion_prompt_splices_document() -> None:
    doc = make_doc(1, body={"name": "geo", "nested": {"a": 1}})
    template = load_template("expansion")
    prompt = render_expansion_prompt(doc)
    marker = template.index("{api_document}")
    assert prompt.startswith(template[:marker])
    assert '{"name": "geo", "nested": {"a": 1}}' in prompt
    assert "{api_document}" not in prompt


def test_render_judgement_prompt_is_exact_concatenation() -> None:
    doc = make_doc(2, body={"name": "x"})
    profile = make_profile()
    expected = (
        load_template("judgement")
        + "\n\n(1) Original API documentation:\n"
        + '{"name": "x"}'
        + "\n\n(2) tool_profile:\n"
        + json.dumps(profile.to_json_dict(), ensure_ascii=False)
    )
    assert render_judgement_prompt(doc, profile) == expected


def test_parse_judgement() -> None:
    assert parse_judgement(" TRUE\n") is True
    assert parse_judgement("false") is False
    assert parse_judgement("probably true") is None
    assert parse_judgement("") is None


def _expander(bad_json_ids=(), empty_ids=(), reject_ids=()):
    """Scripted expander keyed on the tool name embedded in the prompt."""

    def script(prompt: str) -> str:
        for doc_id in empty_ids:
            if f'"tool_{doc_id}"' in prompt:
                return "   "
        for doc_id in bad_json_ids:
            if f'"tool_{doc_id}"' in prompt:
                return "no json at all"
        return profile_text()

    return ScriptedGenerationBackend(script)


def _judge(reject_ids=()):
    def script(prompt: str) -> str:
        for doc_id in reject_ids:
            if f'"tool_{doc_id}"' in prompt:
                return "false"
        return "true"

    return ScriptedGenerationBackend(script)


def _config(expander, judge, refiner, **kwargs) -> PipelineConfig:
    return PipelineConfig(expander=expander, judge=judge, refiner=refiner, **kwargs)


def test_pipeline_conservation_and_provenance() -> None:
    docs = [make_doc(i, domain=DOMAINS[i % 3]) for i in range(12)]
    # Docs 3 and 7 break on step 1 and recover on refinement; doc 5 is
    # rejected by the judge both times; doc 9 stays empty through refinement.
    config = _config(
        expander=_expander(bad_json_ids=(3, 7), empty_ids=(9,)),
        judge=_judge(reject_ids=(5,)),
        refiner=_expander(empty_ids=(9,)),
    )
    documents, report, review = run_pipeline(docs, config)
    assert report.total == 12
    assert report.passed_step2 == 8
    assert report.refined_step3 == 2
    assert report.failed_final == 2
    assert report.total == report.passed_step2 + report.refined_step3 + report.failed_final
    assert dict(report.failure_reasons) == {"judge_rejected": 1, "empty_output": 1}
    by_id = {doc.id: doc for doc in documents}
    assert by_id["d3"].provenance == "step3_refined"
    assert by_id["d7"].provenance == "step3_refined"
    assert by_id["d0"].provenance == "step1_pass"
    assert "d5" not in by_id and "d9" not in by_id
    assert [doc.id for doc in documents] == [f"d{i}" for i in range(12) if i not in (5, 9)]
    assert {item["item_id"] for item in review.items} == {"d3", "d7"}


def test_pipeline_judges_only_rule_passing_profiles() -> None:
    docs = [make_doc(0), make_doc(1)]
    judge = _judge()
    config = _config(
        expander=_expander(bad_json_ids=(0, 1)),
        judge=judge,
        refiner=_expander(bad_json_ids=(1,)),
    )
    documents, report, _ = run_pipeline(docs, config)
    # Only d0's refined profile ever reaches the judge.
    assert len(judge.calls) == 1
    assert [doc.id for doc in documents] == ["d0"]
    assert report.failed_final == 1
    assert dict(report.failure_reasons) == {"invalid_json": 1}


def test_pipeline_refines_exactly_once() -> None:
    expander = _expander(bad_json_ids=(0,))
    refiner = _expander(bad_json_ids=(0,))
    config = _config(expander=expander, judge=_judge(), refiner=refiner)
    documents, report, _ = run_pipeline([make_doc(0)], config)
    assert documents == []
    assert report.failed_final == 1
    assert len(expander.calls) == 1
    assert len(refiner.calls) == 1


def test_pipeline_counts_unparsed_judgements() -> None:
    judge = ScriptedGenerationBackend(lambda p: "hmm, unclear")
    config = _config(expander=_expander(), judge=judge, refiner=_expander())
    documents, report, _ = run_pipeline([make_doc(0)], config)
    # One unparsed verdict per judgement stage, both treated as rejection.
    assert documents == []
    assert report.unparsed_judgements == 2
    assert dict(report.failure_reasons) == {"judge_rejected": 1}


def test_pipeline_rerun_is_byte_identical(tmp_path) -> None:
    docs = [make_doc(i, domain=DOMAINS[i % 3]) for i in range(10)]

    def build_config() -> PipelineConfig:
        return _config(
            expander=_expander(bad_json_ids=(2,)), judge=_judge(), refiner=_expander()
        )

    paths = []
    for run in range(2):
        documents, report, review = run_pipeline(docs, build_config())
        path = tmp_path / f"out{run}.jsonl"
        write_expanded_corpus(documents, str(path))
        (tmp_path / f"report{run}.json").write_text(
            json.dumps(report.to_json_dict(include_latency=False)) + json.dumps(review.to_json_dict())
        )
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "report0.json").read_bytes() == (tmp_path / "report1.json").read_bytes()


def test_pipeline_parallel_matches_serial(tmp_path) -> None:
    docs = [make_doc(i, domain=DOMAINS[i % 3]) for i in range(20)]
    outputs = []
    for jobs in (1, 4):
        config = _config(
            expander=_expander(bad_json_ids=(4, 11)), judge=_judge(reject_ids=(6,)),
            refiner=_expander(),
        )
        documents, report, review = run_pipeline(docs, config, jobs=jobs)
        path = tmp_path / f"jobs{jobs}.jsonl"
        write_expanded_corpus(documents, str(path))
        outputs.append(
            (path.read_bytes(), report.to_json_dict(include_latency=False), review.to_json_dict())
        )
    assert outputs[0] == outputs[1]


def test_pipeline_latency_counts_match_stage_calls() -> None:
    docs = [make_doc(i) for i in range(4)]
    config = _config(expander=_expander(bad_json_ids=(2,)), judge=_judge(), refiner=_expander())
    _, report, _ = run_pipeline(docs, config)
    assert report.latency["expand"].count == 4
    assert report.latency["refine"].count == 1
    assert report.latency["judge"].count == 3
    assert report.latency["judge_refined"].count == 1
    assert report.latency["expand"].min >= 0.0
    payload = report.to_json_dict()
    assert payload["latency"]["expand"]["count"] == 4
    assert "latency" not in report.to_json_dict(include_latency=False)


def test_checkpoint_resume_skips_finished_documents(tmp_path) -> None:
    docs = [make_doc(i) for i in range(8)]
    checkpoint = str(tmp_path / "ckpt.json")

    def flaky(prompt: str) -> str:
        if '"tool_5"' in prompt:
            raise TransientBackendError("injected outage")
        return profile_text()

    broken = _config(
        expander=ScriptedGenerationBackend(flaky, max_retries=2),
        judge=_judge(),
        refiner=_expander(),
    )
    with pytest.raises(BackendUnavailable):
        run_pipeline(docs, broken, checkpoint_path=checkpoint)

    fixed_expander = _expander()
    fixed = _config(expander=fixed_expander, judge=_judge(), refiner=_expander())
    documents, report, _ = run_pipeline(docs, fixed, checkpoint_path=checkpoint)
    assert [doc.id for doc in documents] == [f"d{i}" for i in range(8)]
    assert report.total == 8 and report.passed_step2 == 8
    # Documents finished before the outage are not re-expanded.
    assert len(fixed_expander.calls) == 3

    reference, ref_report, _ = run_pipeline(docs, _config(_expander(), _judge(), _expander()))
    assert [d.to_json_dict() for d in documents] == [d.to_json_dict() for d in reference]
    assert report.to_json_dict(include_latency=False) == ref_report.to_json_dict(
        include_latency=False
    )


def test_checkpoint_rejects_unknown_document_ids(tmp_path) -> None:
    checkpoint = tmp_path / "ckpt.json"
    checkpoint.write_text(json.dumps({
        "version": 1,
        "outcomes": {"ghost": {"status": "passed", "profile": {}, "reasons": [],
                               "unparsed_judgements": 0}},
    }))
    config = _config(_expander(), _judge(), _expander())
    with pytest.raises(ParseError, match="ghost"):
        run_pipeline([make_doc(1)], config, checkpoint_path=str(checkpoint))


def test_pipeline_rejects_empty_corpus_and_bad_jobs() -> None:
    config = _config(_expander(), _judge(), _expander())
    with pytest.raises(ValidationError):
        run_pipeline([], config)
    with pytest.raises(ValidationError):
        run_pipeline([make_doc(1)], config, jobs=0)


def test_review_batch_sampling_is_seeded_and_ordered() -> None:
    refined = [make_expanded(make_doc(i), provenance="step3_refined") for i in range(30)]
    batch = build_review_batch(refined, sample_size=10, seed=3)
    again = build_review_batch(refined, sample_size=10, seed=3)
    other = build_review_batch(refined, sample_size=10, seed=4)
    assert batch.to_json_dict() == again.to_json_dict()
    assert [i["item_id"] for i in batch.items] != [i["item_id"] for i in other.items]
    ids = [item["item_id"] for item in batch.items]
    positions = [int(i[1:]) for i in ids]
    assert positions == sorted(positions)
    assert len(ids) == 10 and batch.batch_id.startswith("rb-")
    small = build_review_batch(refined[:4], sample_size=10, seed=3)
    assert len(small.items) == 4
    item = batch.items[0]
    assert set(item) == {"item_id", "dataset", "domain", "provenance", "original", "profile"}

    round_trip = ReviewBatch.from_json_dict(batch.to_json_dict())
    assert round_trip.batch_id == batch.batch_id
    with pytest.raises(ValidationError):
        ReviewBatch.from_json_dict({"batch_id": "b", "items": [{"item_id": "a"}, {"item_id": "a"}]})


def test_token_stats_are_additive_and_macro_averaged() -> None:
    web = make_expanded(make_doc(0, domain="web", body={"name": "alpha beta"}))
    code = make_expanded(make_doc(1, domain="code", body={"name": "gamma"}))
    stats = token_stats([web, code], tokenizer="whitespace")
    expected = {}
    for doc in (web, code):
        original = len(json.dumps(doc.original.body, ensure_ascii=False).split())
        profile = len(json.dumps(doc.profile.to_json_dict(), ensure_ascii=False).split())
        expected[doc.domain] = (original, profile)
    for domain, (original, profile) in expected.items():
        row = stats.per_domain[domain]
        assert row["original"] == original
        assert row["profile"] == profile
        assert row["expanded"] == original + profile
        assert row["documents"] == 1.0
    assert stats.overall["expanded"] == pytest.approx(
        (stats.per_domain["web"]["expanded"] + stats.per_domain["code"]["expanded"]) / 2
    )

    original_only = token_stats([web, code], selection=FieldSelection.original_only())
    assert original_only.per_domain["web"]["profile"] == 0.0
    assert original_only.per_domain["web"]["expanded"] == original_only.per_domain["web"]["original"]

    with pytest.raises(ValidationError):
        token_stats([], tokenizer="whitespace")
    with pytest.raises(ValidationError):
        token_stats([web], tokenizer="bogus")


def test_token_stats_tokenizer_choice_changes_counts() -> None:
    doc = make_expanded(make_doc(0, body={"name": "snake_case value"}))
    whitespace = token_stats([doc], tokenizer="whitespace")
    unicode_tok = token_stats([doc], tokenizer="unicode_alnum_lower")
    assert whitespace.per_domain["web"]["original"] != unicode_tok.per_domain["web"]["original"]
