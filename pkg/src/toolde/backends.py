"""Model-backend clients: HTTP implementations plus deterministic mocks.

Three roles share one wire style (JSON over POST): generation, embedding, and
rerank logits. Every implementation records each request/response pair with a
monotonically increasing sequence number so runs can be replayed in tests, and
retries transient failures with jittered exponential backoff before giving up
with BackendUnavailable.
"""

import hashlib
import logging
import math
import random
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import requests

from toolde.errors import BackendUnavailable, ProtocolError, ValidationError
from toolde.retrieval import tokenize

logger = logging.getLogger(__name__)

DEFAULT_PERMITS = 8
BACKOFF_START_SECONDS = 0.5
BACKOFF_FACTOR = 2.0


@dataclass
class BackendConfig:
    """Connection settings for one HTTP backend role."""

    name: str
    url: str
    timeout: float = 30.0
    max_retries: int = 3
    token: str | None = None
    permits: int = DEFAULT_PERMITS
    dimension: int | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("backend name must be non-empty")
        if not self.url:
            raise ValidationError(f"backend {self.name!r}: url must be non-empty")
        if self.max_retries < 1:
            raise ValidationError(f"backend {self.name!r}: max_retries must be >= 1")
        if self.permits < 1:
            raise ValidationError(f"backend {self.name!r}: permits must be >= 1")


@dataclass(frozen=True)
class CallRecord:
    """One logged backend exchange; error is set instead of response on failure."""

    seq: int
    kind: str
    request: Any
    response: Any = None
    error: str | None = None


class TransientBackendError(Exception):
    """Internal marker for failures worth retrying (timeouts, 5xx, refused)."""


class _BackendBase:
    """Shared call log, permit bound, and retry loop."""

    def __init__(self, name: str, *, max_retries: int = 3, permits: int = DEFAULT_PERMITS,
                 sleep: Callable[[float], None] | None = None):
        self.name = name
        self.max_retries = max_retries
        self.permit = threading.BoundedSemaphore(permits)
        self.calls: list[CallRecord] = []
        self._lock = threading.Lock()
        self._seq = 0
        self._sleep = sleep
        self._jitter = random.Random(0)

    def _record(self, kind: str, request: Any, response: Any = None,
                error: str | None = None) -> None:
        with self._lock:
            self._seq += 1
            self.calls.append(CallRecord(self._seq, kind, request, response, error))

    def _call_with_retries(self, kind: str, request: Any, attempt_fn: Callable[[], Any]) -> Any:
        delay = BACKOFF_START_SECONDS
        with self.permit:
            for attempt in range(1, self.max_retries + 1):
                try:
                    response = attempt_fn()
                except ProtocolError as exc:
                    self._record(kind, request, error=str(exc))
                    raise
                except TransientBackendError as exc:
                    self._record(kind, request, error=str(exc))
                    logger.warning(
                        "backend %s %s attempt %d/%d failed: %s",
                        self.name, kind, attempt, self.max_retries, exc,
                    )
                    if attempt == self.max_retries:
                        raise BackendUnavailable(
                            f"backend {self.name!r} {kind} failed", attempts=attempt
                        )
                    if self._sleep is not None:
                        self._sleep(delay * (0.5 + self._jitter.random()))
                    delay *= BACKOFF_FACTOR
                else:
                    self._record(kind, request, response=response)
                    return response
        raise AssertionError("unreachable")


class GenerationBackend(_BackendBase):
    def generate(self, prompt: str, max_tokens: int) -> str:
        raise NotImplementedError


class EmbeddingBackend(_BackendBase):
    dimension: int | None = None

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        raise NotImplementedError


class RerankBackend(_BackendBase):
    def rerank_logits(self, prompt: str) -> tuple[float, float]:
        raise NotImplementedError


# ── HTTP implementations ──


class _HTTPMixin:
    def _init_http(self, config: BackendConfig, session: requests.Session | None) -> None:
        self.config = config
        self._session = session or requests.Session()

    def _post_json(self, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = self.config.url.rstrip("/") + path
        headers = {}
        if self.config.token:
            headers["Authorization"] = f"Bearer {self.config.token}"
        try:
            response = self._session.post(
                url, json=payload, headers=headers, timeout=self.config.timeout
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransientBackendError(f"{type(exc).__name__}: {exc}")
        if response.status_code >= 500:
            raise TransientBackendError(f"HTTP {response.status_code}")
        if response.status_code != 200:
            raise ProtocolError(
                f"backend {self.config.name!r}: HTTP {response.status_code} from {path}"
            )
        try:
            data = response.json()
        except ValueError:
            raise ProtocolError(f"backend {self.config.name!r}: non-JSON body from {path}")
        if not isinstance(data, dict):
            raise ProtocolError(f"backend {self.config.name!r}: body from {path} is not an object")
        return data


def _require_finite(name: str, value: Any, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProtocolError(f"backend {name!r}: {what} is not a number")
    number = float(value)
    if not math.isfinite(number):
        raise ProtocolError(f"backend {name!r}: non-finite {what}")
    return number


class HTTPGenerationBackend(GenerationBackend, _HTTPMixin):
    """POST /generate {"prompt","max_tokens"} -> {"text"}."""

    def __init__(self, config: BackendConfig, session: requests.Session | None = None,
                 sleep: Callable[[float], None] | None = None):
        super().__init__(config.name, max_retries=config.max_retries,
                         permits=config.permits, sleep=sleep if sleep is not None else time.sleep)
        self._init_http(config, session)

    def generate(self, prompt: str, max_tokens: int) -> str:
        if not prompt:
            raise ValidationError("generate: prompt must be non-empty")
        if max_tokens < 1:
            raise ValidationError("generate: max_tokens must be >= 1")
        payload = {"prompt": prompt, "max_tokens": max_tokens}

        def attempt() -> str:
            data = self._post_json("/generate", payload)
            text = data.get("text")
            if not isinstance(text, str):
                raise ProtocolError(f"backend {self.name!r}: missing string 'text'")
            return text

        return self._call_with_retries("generate", payload, attempt)


class HTTPEmbeddingBackend(EmbeddingBackend, _HTTPMixin):
    """POST /embed {"texts":[...]} -> {"vectors":[[...]]}."""

    def __init__(self, config: BackendConfig, session: requests.Session | None = None,
                 sleep: Callable[[float], None] | None = None):
        super().__init__(config.name, max_retries=config.max_retries,
                         permits=config.permits, sleep=sleep if sleep is not None else time.sleep)
        self._init_http(config, session)
        self.dimension = config.dimension

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValidationError("embed: texts must be non-empty")
        payload = {"texts": list(texts)}

        def attempt() -> list[list[float]]:
            data = self._post_json("/embed", payload)
            vectors = data.get("vectors")
            if not isinstance(vectors, list) or len(vectors) != len(texts):
                raise ProtocolError(
                    f"backend {self.name!r}: expected {len(texts)} vectors"
                )
            rows: list[list[float]] = []
            for vector in vectors:
                if not isinstance(vector, list):
                    raise ProtocolError(f"backend {self.name!r}: vector is not a list")
                if self.dimension is not None and len(vector) != self.dimension:
                    raise ProtocolError(
                        f"backend {self.name!r}: dimension mismatch"
                        f" (expected {self.dimension}, got {len(vector)})"
                    )
                rows.append([_require_finite(self.name, x, "embedding value") for x in vector])
            return rows

        return self._call_with_retries("embed", payload, attempt)


class HTTPRerankBackend(RerankBackend, _HTTPMixin):
    """POST /rerank_logits {"prompt"} -> {"logit_true","logit_false"}."""

    def __init__(self, config: BackendConfig, session: requests.Session | None = None,
                 sleep: Callable[[float], None] | None = None):
        super().__init__(config.name, max_retries=config.max_retries,
                         permits=config.permits, sleep=sleep if sleep is not None else time.sleep)
        self._init_http(config, session)

    def rerank_logits(self, prompt: str) -> tuple[float, float]:
        if not prompt:
            raise ValidationError("rerank_logits: prompt must be non-empty")
        payload = {"prompt": prompt}

        def attempt() -> tuple[float, float]:
            data = self._post_json("/rerank_logits", payload)
            try:
                logit_true = data["logit_true"]
                logit_false = data["logit_false"]
            except KeyError as exc:
                raise ProtocolError(f"backend {self.name!r}: missing {exc.args[0]!r}")
            if isinstance(logit_true, bool) or isinstance(logit_false, bool) or not (
                isinstance(logit_true, (int, float)) and isinstance(logit_false, (int, float))
            ):
                raise ProtocolError(f"backend {self.name!r}: logits must be numbers")
            return (
                _require_finite(self.name, logit_true, "logit_true"),
                _require_finite(self.name, logit_false, "logit_false"),
            )

        return self._call_with_retries("rerank_logits", payload, attempt)


# ── Deterministic mocks ──


def _resolve_script(script: Any, key: str, consumed: list[Any]) -> Any:
    """Scripts are a callable of the prompt, a dict keyed by prompt, or a list
    consumed in call order."""
    if callable(script):
        return script(key)
    if isinstance(script, dict):
        if key not in script:
            raise ProtocolError(f"scripted backend has no entry for prompt {key[:80]!r}")
        return script[key]
    if not consumed:
        raise ProtocolError("scripted backend transcript exhausted")
    return consumed.pop(0)


class ScriptedGenerationBackend(GenerationBackend):
    """Transcript-driven generation mock with optional failure injection."""

    def __init__(self, script: Any, *, fail_times: int = 0, max_retries: int = 3,
                 name: str = "scripted-gen"):
        super().__init__(name, max_retries=max_retries)
        self._script = script
        self._consumed = list(script) if isinstance(script, list) else []
        self._fail_remaining = fail_times

    def generate(self, prompt: str, max_tokens: int) -> str:
        if not prompt:
            raise ValidationError("generate: prompt must be non-empty")

        def attempt() -> str:
            if self._fail_remaining > 0:
                self._fail_remaining -= 1
                raise TransientBackendError("injected failure")
            text = _resolve_script(self._script, prompt, self._consumed)
            if not isinstance(text, str):
                raise ProtocolError(f"backend {self.name!r}: scripted value is not text")
            return text

        return self._call_with_retries("generate", {"prompt": prompt}, attempt)


class HashingEmbeddingBackend(EmbeddingBackend):
    """Deterministic bag-of-words embedding: tokens hashed into buckets.

    Rows are raw counts (not normalized); the dense index does the
    normalization and rejects all-zero rows.
    """

    def __init__(self, dimension: int = 8, *, name: str = "hashing-embed",
                 fail_times: int = 0, max_retries: int = 3):
        super().__init__(name, max_retries=max_retries)
        if dimension < 1:
            raise ValidationError("embedding dimension must be >= 1")
        self.dimension = dimension
        self._fail_remaining = fail_times

    def _vector(self, text: str) -> list[float]:
        row = [0.0] * self.dimension
        for token in tokenize(text):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            row[int.from_bytes(digest[:8], "big") % self.dimension] += 1.0
        return row

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            raise ValidationError("embed: texts must be non-empty")

        def attempt() -> list[list[float]]:
            if self._fail_remaining > 0:
                self._fail_remaining -= 1
                raise TransientBackendError("injected failure")
            return [self._vector(text) for text in texts]

        return self._call_with_retries("embed", {"texts": list(texts)}, attempt)


class ScriptedRerankBackend(RerankBackend):
    """Transcript-driven rerank mock returning (logit_true, logit_false)."""

    def __init__(self, script: Any, *, fail_times: int = 0, max_retries: int = 3,
                 fail_for: Callable[[str], bool] | None = None,
                 name: str = "scripted-rerank"):
        super().__init__(name, max_retries=max_retries)
        self._script = script
        self._consumed = list(script) if isinstance(script, list) else []
        self._fail_remaining = fail_times
        self._fail_for = fail_for

    def rerank_logits(self, prompt: str) -> tuple[float, float]:
        if not prompt:
            raise ValidationError("rerank_logits: prompt must be non-empty")

        def attempt() -> tuple[float, float]:
            if self._fail_remaining > 0:
                self._fail_remaining -= 1
                raise TransientBackendError("injected failure")
            if self._fail_for is not None and self._fail_for(prompt):
                raise TransientBackendError("injected per-prompt failure")
            logit_true, logit_false = _resolve_script(self._script, prompt, self._consumed)
            return float(logit_true), float(logit_false)

        return self._call_with_retries("rerank_logits", {"prompt": prompt}, attempt)
