"""Toolkit configuration: TOML file, environment overrides, backend factory.

Precedence, lowest to highest: built-in defaults, config file values,
TOOLDE_BACKEND_<ROLE>_URL / _TOKEN environment variables. Randomized commands
refuse to run without an explicit seed (flag or config).
"""

import os
from dataclasses import dataclass, field
from typing import Any

import tomli

from toolde.backends import (
    BackendConfig,
    HTTPEmbeddingBackend,
    HTTPGenerationBackend,
    HTTPRerankBackend,
)
from toolde.errors import ValidationError
from toolde.retrieval import DEFAULT_POOL_SIZE

ROLES = ("expander", "judge", "refiner", "embed", "rerank")

_ROLE_KIND = {
    "expander": "generation",
    "judge": "generation",
    "refiner": "generation",
    "embed": "embedding",
    "rerank": "rerank",
}

ENV_PREFIX = "TOOLDE_BACKEND_"


@dataclass
class ToolkitConfig:
    """Everything a CLI command may need, already validated."""

    backends: dict[str, BackendConfig] = field(default_factory=dict)
    seed: int | None = None
    jobs: int = 1
    max_tokens: int = 1024
    review_sample_size: int = 100
    k1: float = 1.2
    b: float = 0.75
    pool_size: int = DEFAULT_POOL_SIZE
    ks: tuple[int, ...] = (10,)

    def __post_init__(self) -> None:
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if self.pool_size < max(self.ks):
            raise ValidationError(
                f"pool_size {self.pool_size} must be >= max eval K {max(self.ks)}"
            )


def _read_toml(path: str) -> dict[str, Any]:
    with open(path, "rb") as handle:
        return tomli.load(handle)


def load_config(path: str | None = None, environ: dict[str, str] | None = None) -> ToolkitConfig:
    """Load a TOML config file (optional) and apply environment overrides."""
    env = os.environ if environ is None else environ
    data: dict[str, Any] = _read_toml(path) if path else {}
    backends: dict[str, BackendConfig] = {}
    file_backends = data.get("backends", {})
    if not isinstance(file_backends, dict):
        raise ValidationError("[backends] must be a table of role tables")
    for role in ROLES:
        section = file_backends.get(role, {})
        if not isinstance(section, dict):
            raise ValidationError(f"[backends.{role}] must be a table")
        url = env.get(f"{ENV_PREFIX}{role.upper()}_URL", section.get("url"))
        token = env.get(f"{ENV_PREFIX}{role.upper()}_TOKEN", section.get("token"))
        if not url:
            continue
        backends[role] = BackendConfig(
            name=str(section.get("model", role)),
            url=str(url),
            timeout=float(section.get("timeout", 30.0)),
            max_retries=int(section.get("max_retries", 3)),
            token=token,
            permits=int(section.get("permits", 8)),
            dimension=int(section["dimension"]) if "dimension" in section else None,
        )
    pipeline = data.get("pipeline", {})
    retrieval = data.get("retrieval", {})
    evaluation = data.get("evaluation", {})
    ks = tuple(int(k) for k in evaluation.get("ks", [10]))
    return ToolkitConfig(
        backends=backends,
        seed=int(data["seed"]) if "seed" in data else None,
        jobs=int(data.get("jobs", 1)),
        max_tokens=int(pipeline.get("max_tokens", 1024)),
        review_sample_size=int(pipeline.get("review_sample_size", 100)),
        k1=float(retrieval.get("k1", 1.2)),
        b=float(retrieval.get("b", 0.75)),
        pool_size=int(retrieval.get("pool_size", DEFAULT_POOL_SIZE)),
        ks=ks,
    )


def make_backend(config: ToolkitConfig, role: str):
    """Build the HTTP client for a configured role; fail clearly otherwise."""
    if role not in ROLES:
        raise ValidationError(f"unknown backend role {role!r} (have {ROLES})")
    backend_config = config.backends.get(role)
    if backend_config is None:
        raise ValidationError(
            f"backend role {role!r} is not configured: set [backends.{role}] url"
            f" in the config file or {ENV_PREFIX}{role.upper()}_URL"
        )
    kind = _ROLE_KIND[role]
    if kind == "generation":
        return HTTPGenerationBackend(backend_config)
    if kind == "embedding":
        return HTTPEmbeddingBackend(backend_config)
    return HTTPRerankBackend(backend_config)
