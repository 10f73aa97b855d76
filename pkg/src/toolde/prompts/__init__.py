"""Versioned prompt templates, stored one per file.

Template files end with a single trailing newline (text-file convention);
that newline is not part of the prompt, so loaded templates end at their
last content character. Placeholder substitution is always single-pass:
fill text is spliced in verbatim and never rescanned for markers.
"""

import re
from importlib import resources

from toolde.errors import ValidationError

TEMPLATE_NAMES = ("expansion", "judgement", "rerank", "audit")

_cache: dict[str, str] = {}


def load_template(name: str) -> str:
    if name not in TEMPLATE_NAMES:
        raise ValidationError(f"unknown prompt template {name!r}")
    if name not in _cache:
        text = resources.files(__package__).joinpath(f"{name}.txt").read_text("utf-8")
        _cache[name] = text[:-1] if text.endswith("\n") else text
    return _cache[name]


def fill_template(template: str, substitutions: dict[str, str]) -> str:
    """Replace each marker occurrence from the original template, single-pass."""
    pattern = re.compile("|".join(re.escape(marker) for marker in substitutions))
    return pattern.sub(lambda match: substitutions[match.group(0)], template)
