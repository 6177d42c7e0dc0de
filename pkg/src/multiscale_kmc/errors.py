"""Exception types raised across the package."""

from __future__ import annotations


class KMCError(Exception):
    """Base class for all package errors."""


class BadDimension(KMCError, ValueError):
    pass


class NegativeRate(KMCError, ValueError):
    pass


class NotIrreducible(KMCError, ValueError):
    """A rate block that must be irreducible is not.

    ``block`` names the offending matrix (e.g. ``"Q0"`` or ``"energy class 1"``)
    so front ends can report it.
    """

    def __init__(self, message: str, block: str | None = None):
        super().__init__(message)
        self.block = block


class EnergyNotConserved(KMCError, ValueError):
    def __init__(self, message: str, entry: tuple[int, int] | None = None):
        super().__init__(message)
        self.entry = entry


class InadmissibleEnergy(KMCError, ValueError):
    pass


class AbsorbingState(KMCError):
    """The process sits in a state with zero exit rate."""

    def __init__(self, state: int, time: float = 0.0):
        super().__init__(f"state {state} is absorbing (reached at t={time!r})")
        self.state = state
        self.time = time


class EventBudgetExceeded(KMCError):
    """The event budget ran out before the path finished."""

    def __init__(self, events: int, time: float):
        super().__init__(f"event budget of {events} jumps exhausted at t={time!r}")
        self.events = events
        self.time = time


class TooFewSamples(KMCError, ValueError):
    pass


class ConfigError(KMCError, ValueError):
    pass
