"""Exception hierarchy shared by every zspace module."""

from __future__ import annotations


class ZSpaceError(Exception):
    """Base class for all recoverable zspace failures."""


class ZeroVector(ZSpaceError, ValueError):
    pass


class DimMismatch(ZSpaceError, ValueError):
    pass


class EmptyText(ZSpaceError, ValueError):
    pass


class ServiceError(ZSpaceError):
    """External embedding service failed (non-2xx, timeout, bad payload)."""


class NotPositiveDefinite(ZSpaceError, ValueError):
    pass


class NoEffectiveKeywords(ZSpaceError, ValueError):
    """Every keyword weight is (numerically) zero."""


class DegenerateDifferential(ZSpaceError, ValueError):
    pass


class DegenerateFusion(ZSpaceError, ValueError):
    pass


class ParseError(ZSpaceError, ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class EmptyQuery(ZSpaceError, ValueError):
    pass


class CyclicPlan(ZSpaceError, ValueError):
    pass


class PlanError(ZSpaceError, ValueError):
    """Plan references an unknown step id or is otherwise malformed."""


class ProviderError(ZSpaceError):
    pass


class EmptyRegistry(ZSpaceError, LookupError):
    pass


class UnassignedStep(ZSpaceError, LookupError):
    pass
