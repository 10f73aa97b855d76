"""Tool documentation expansion, retrieval, and evaluation toolkit."""

from toolde.corpus import (
    ExpandedDocument,
    FieldSelection,
    Query,
    RankedRun,
    RawToolDocument,
    ToolProfile,
)
from toolde.errors import (
    BackendUnavailable,
    ParseError,
    ProtocolError,
    ToolDEError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "BackendUnavailable",
    "ExpandedDocument",
    "FieldSelection",
    "ParseError",
    "ProtocolError",
    "Query",
    "RankedRun",
    "RawToolDocument",
    "ToolDEError",
    "ToolProfile",
    "ValidationError",
    "__version__",
]
