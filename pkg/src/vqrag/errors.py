"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class VqragError(Exception):
    """Base class for all engine errors."""


class DomainError(VqragError):
    """A value violates a domain-type invariant."""


class BackendError(VqragError):
    """Base class for model-backend failures."""


class TransportError(BackendError):
    """The backend could not be reached (after retries) or timed out."""


class ProtocolError(BackendError):
    """The backend replied with something that violates the wire contract."""


class ProbeError(VqragError):
    """Media probing failed."""


class ProbeToolMissing(ProbeError):
    """The external probe tool is not available on PATH."""


class StageError(VqragError):
    """A pipeline stage failed; carries stage attribution."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
