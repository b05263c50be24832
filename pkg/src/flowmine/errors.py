"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class FlowmineError(Exception):
    """Base class for all toolkit errors."""


class CorpusError(FlowmineError):
    """Raised when a corpus file or record violates the conversation schema."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateIdError(CorpusError):
    """Raised when two records in one corpus share a conversation id."""


class GatewayError(FlowmineError):
    """Base class for model-gateway failures."""


class FixtureMissError(GatewayError):
    """Raised in replay mode when no fixture exists for a request digest."""

    def __init__(self, digest: str):
        self.digest = digest
        super().__init__(f"no recorded fixture for request digest {digest}")


class TransportError(GatewayError):
    """Raised when a live request fails after retries."""


class ProviderRefusalError(GatewayError):
    """Raised when the provider returns an error payload instead of content."""


class SchemaViolationError(FlowmineError):
    """Raised when structured model output is missing or mistypes a key."""

    def __init__(self, key: str, detail: str = ""):
        self.key = key
        msg = f"schema violation at key {key!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ResponseParseError(FlowmineError):
    """Raised when model output cannot be parsed; carries the raw text."""

    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(message)


class GraphError(FlowmineError):
    """Raised when a workflow graph violates its structural invariants."""


class ConfigError(FlowmineError):
    """Raised on invalid experiment configuration (CLI exit code 2)."""


class StageError(FlowmineError):
    """Wraps a failure inside one pipeline stage (CLI exit code 4)."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
