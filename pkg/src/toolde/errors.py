"""Exception types shared across the toolkit."""


class ToolDEError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ToolDEError):
    """An input or argument violates a documented invariant."""


class ParseError(ToolDEError):
    """A file or payload could not be parsed.

    Carries the offending path and 1-based line number when known so CLI
    messages can point at the exact input line.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        location = ""
        if path is not None:
            location = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + location)
        self.path = path
        self.line = line


class BackendUnavailable(ToolDEError):
    """A backend stayed unreachable after exhausting all retry attempts."""

    def __init__(self, message: str, *, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class ProtocolError(ToolDEError):
    """A backend answered, but with a malformed or out-of-contract payload."""
