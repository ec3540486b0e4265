"""Exception hierarchy for the sepdd engine.

Every error raised intentionally by this package derives from
:class:`SepddError` so callers can catch engine failures without
swallowing programming errors.
"""

from __future__ import annotations


class SepddError(Exception):
    """Base class for all errors raised by sepdd."""


# --- graph / journal ---------------------------------------------------


class DuplicateNodeId(SepddError):
    pass


class UnknownParent(SepddError):
    pass


class UnknownNode(SepddError):
    pass


class MissingRunStarted(SepddError):
    """Journal replay started on a stream whose first event is not RunStarted."""


class SequenceGap(SepddError):
    def __init__(self, expected: int, got: int) -> None:
        super().__init__(f"journal sequence gap: expected seq {expected}, got {got}")
        self.expected = expected
        self.got = got


class MalformedEvent(SepddError):
    pass


class CorruptJournal(SepddError):
    pass


# --- strategy ----------------------------------------------------------


class NoValidNode(SepddError):
    pass


class NoExpandableNode(SepddError):
    pass


class InsufficientDiversity(SepddError):
    """Merge candidates all share one first-generation branch; merge is skipped."""


class InsufficientCandidates(SepddError):
    """Fewer valid nodes than the merge arity; merge is skipped."""


# --- operators / backends ----------------------------------------------


class BackendError(SepddError):
    """Raised when a completion backend cannot produce a usable response."""


class UnknownFingerprint(BackendError):
    """A playback table was asked for a request it has no recording of."""


class ScriptExhausted(BackendError):
    """A sequence-scripted backend ran out of responses for an operator."""


class UnparsableSuggestions(SepddError):
    pass


class MissingCodeBlock(SepddError):
    pass


# --- gateway -----------------------------------------------------------


class GatewayError(BackendError):
    pass


class BudgetExhausted(GatewayError):
    """Token budget exhausted; fatal for the run."""


class TransientExhausted(GatewayError):
    """Transient HTTP failures persisted beyond the retry limit."""


class AuthFailure(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


# --- sandbox -----------------------------------------------------------


class SandboxError(SepddError):
    pass


class WorkspaceUnwritable(SandboxError):
    pass


# --- configuration / engine ---------------------------------------------


class ConfigError(SepddError):
    pass


class ConfigMismatch(SepddError):
    """Resumed run was given a config whose hash differs from the journal's."""


class ScheduleError(SepddError):
    """A recorded expansion schedule references a node that cannot be expanded."""
