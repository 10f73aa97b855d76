"""Shared builders for synthetic corpora, scripted model outputs, and a tiny
threaded HTTP server that speaks the backend wire protocol."""

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from toolde.backends import HashingEmbeddingBackend
from toolde.corpus import DOMAINS, ExpandedDocument, Query, RawToolDocument, ToolProfile

# Small word pool so random corpora get meaningful term overlap.
WORDS = (
    "weather forecast city stock price chart email send inbox search query"
    " index token api endpoint map route traffic music playlist album photo"
    " resize crop translate language text parse file upload delete user auth"
).split()


def make_doc(i: int, domain: str = "web", dataset: str = "alpha", body: dict | None = None) -> RawToolDocument:
    if body is None:
        body = {"name": f"tool_{i}", "description": f"does thing {i}"}
    return RawToolDocument(id=f"d{i}", dataset=dataset, domain=domain, body=body)


def random_body(rng: random.Random) -> dict:
    body = {"name": " ".join(rng.sample(WORDS, 2))}
    if rng.random() < 0.8:
        body["description"] = " ".join(rng.choices(WORDS, k=rng.randint(3, 12)))
    if rng.random() < 0.5:
        body["parameters"] = {rng.choice(WORDS): {"type": "string", "required": rng.random() < 0.5}}
    if rng.random() < 0.3:
        body["responses"] = [{"code": 200, "body": rng.choice(WORDS)}]
    if rng.random() < 0.2:
        body["note"] = "unicode über café 中文"
    return body


def random_corpus(rng: random.Random, n: int, dataset: str = "alpha") -> list[RawToolDocument]:
    docs = []
    for i in range(n):
        domain = DOMAINS[i % len(DOMAINS)]
        docs.append(RawToolDocument(id=f"d{i:03d}", dataset=dataset, domain=domain, body=random_body(rng)))
    return docs


def make_profile(
    function: str = "Looks things up.",
    tags: tuple = ("search", "lookup"),
    when_to_use: str | None = "When you need to look something up.",
    example_usage: tuple = ({"query": "find x", "api_call": "lookup(q=x)"},),
    limitation: str | None = "English only.",
) -> ToolProfile:
    return ToolProfile(
        function=function,
        tags=tags,
        when_to_use=when_to_use,
        example_usage=example_usage,
        limitation=limitation,
    )


def profile_text(profile: ToolProfile | None = None, **overrides) -> str:
    """A model response carrying a profile JSON object."""
    obj = (profile or make_profile()).to_json_dict()
    obj.update(overrides)
    return json.dumps({"tool_profile": obj}, ensure_ascii=False)


def make_expanded(doc: RawToolDocument, profile: ToolProfile | None = None,
                  provenance: str = "step1_pass") -> ExpandedDocument:
    return ExpandedDocument(original=doc, profile=profile or make_profile(), provenance=provenance)


def make_query(i: int, domain: str = "web", text: str | None = None, instruction: str | None = None) -> Query:
    return Query(qid=f"q{i}", domain=domain, text=text or f"find tool {i}", instruction=instruction)


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def corpus_records(docs) -> list[dict]:
    return [{"id": d.id, "dataset": d.dataset, "domain": d.domain, "doc": d.body} for d in docs]


def query_records(queries) -> list[dict]:
    records = []
    for q in queries:
        record = {"qid": q.qid, "domain": q.domain, "query": q.text}
        if q.instruction is not None:
            record["instruction"] = q.instruction
        records.append(record)
    return records


def write_qrels(path, qrels: dict) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for qid, gold in qrels.items():
            for doc_id in sorted(gold):
                handle.write(f"{qid} 0 {doc_id} 1\n")


# ── threaded HTTP backend server ──


class BackendServer:
    """Serves /generate, /embed, and /rerank_logits for integration tests.

    Handlers are plain callables the test can swap out; `fail_next` makes the
    following N requests return HTTP 500 to exercise retries.
    """

    def __init__(self, token: str | None = None):
        self.token = token
        self.fail_next = 0
        self.requests: list[tuple[str, dict]] = []
        self._lock = threading.Lock()
        self._embedder = HashingEmbeddingBackend(dimension=8)
        self.generate_handler = lambda prompt: profile_text()
        self.rerank_handler = lambda prompt: (5.0, -5.0)
        self.raw_response: bytes | None = None  # overrides body when set

        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output quiet
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                with server._lock:
                    server.requests.append((self.path, body))
                    if server.fail_next > 0:
                        server.fail_next -= 1
                        self.send_response(500)
                        self.end_headers()
                        return
                if server.token is not None:
                    if self.headers.get("Authorization") != f"Bearer {server.token}":
                        self.send_response(401)
                        self.end_headers()
                        return
                if server.raw_response is not None:
                    payload = server.raw_response
                elif self.path == "/generate":
                    payload = json.dumps({"text": server.generate_handler(body["prompt"])}).encode()
                elif self.path == "/embed":
                    vectors = server._embedder.embed(body["texts"])
                    payload = json.dumps({"vectors": vectors}).encode()
                elif self.path == "/rerank_logits":
                    true, false = server.rerank_handler(body["prompt"])
                    payload = json.dumps({"logit_true": true, "logit_false": false}).encode()
                else:
                    self.send_response(404)
                    self.end_headers()
                    return
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self._httpd.server_port}"
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def backend_server():
    server = BackendServer()
    yield server
    server.close()
