"""Exception hierarchy shared by all archspace modules."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SourceSpan:
    """1-based location of a token or region in a space file."""

    line: int
    column: int
    length: int = 1

    def __str__(self) -> str:
        return f"{self.line}:{self.column}"


class ArchspaceError(Exception):
    """Base class for every error raised by this package."""


# ---------------------------------------------------------------------------
# DSL parsing


class SpaceParseError(ArchspaceError):
    """Syntax or structure error in a space declaration.

    Carries the source span of the offending token so the CLI can point
    at it.
    """

    def __init__(self, message: str, span: SourceSpan):
        super().__init__(f"{span}: {message}")
        self.message = message
        self.span = span


class UnbalancedParens(SpaceParseError):
    pass


class UnknownModuleKind(SpaceParseError):
    pass


class ArityMismatch(SpaceParseError):
    pass


class EmptyValueList(SpaceParseError):
    pass


class HeterogeneousValueList(SpaceParseError):
    pass


class DepthExceeded(SpaceParseError):
    pass


class InvalidValue(SpaceParseError):
    """A literal is outside the range a module kind accepts.

    Checked at parse time (duplicate domain values, non-positive repeat
    counts, keep probabilities outside (0, 1], unknown padding names) so
    that instantiation never fails.
    """


class SyntaxViolation(SpaceParseError):
    """Structural problems not covered by the named parse errors:
    trailing input, nested lists outside UserHyperparams, stray tokens."""


# ---------------------------------------------------------------------------
# Module instances and shapes


class NotInitialized(ArchspaceError):
    pass


class AlreadySpecified(ArchspaceError):
    pass


class NotSpecified(ArchspaceError):
    pass


class IndexOutOfRange(ArchspaceError):
    pass


class ShapeIncompatible(ArchspaceError):
    pass


class ShapeUnderflow(ArchspaceError):
    """VALID padding shrank a spatial dimension to zero or below."""


# ---------------------------------------------------------------------------
# Traversal


class PathMismatch(ArchspaceError):
    """A recorded path does not replay on this space (stale site id,
    index out of range, or option value drift)."""


class SampleFailed(ArchspaceError):
    def __init__(self, site_id: str, cause: ArchspaceError):
        super().__init__(f"sampling failed at {site_id}: {cause}")
        self.site_id = site_id
        self.cause = cause


# ---------------------------------------------------------------------------
# Graph IR


class MalformedGraph(ArchspaceError):
    pass


class InconsistentShapes(ArchspaceError):
    """Stored shapes or parameter counts disagree with recomputation."""


# ---------------------------------------------------------------------------
# Evaluation


class EvaluationFailed(ArchspaceError):
    """An evaluator could not produce a score.

    ``reason`` is one of "exit_code", "timeout", "parse", "sample",
    "compile".
    """

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"evaluation failed ({reason}){': ' + detail if detail else ''}")
        self.reason = reason
        self.detail = detail


class UnknownModel(ArchspaceError):
    """Score table has no entry for a model's signature hash."""
