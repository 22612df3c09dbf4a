"""Exception types shared across the package."""


class SeqMCError(Exception):
    """Base class for all errors raised by seqmc."""


class DimensionMismatchError(SeqMCError, ValueError):
    """Objects defined over state spaces of different sizes were combined."""


class DegenerateWeightsError(SeqMCError):
    """All resampling weights are zero (total potential collapse)."""


class InfeasibleError(SeqMCError, ValueError):
    """A strict feasibility inequality required by a bound is violated.

    ``condition`` names the violated inequality.
    """

    def __init__(self, condition, message=None):
        self.condition = condition
        super().__init__(message or f"infeasible: {condition}")


class CapacityError(SeqMCError):
    """The dense state-space budget would be exceeded."""


class ConfigError(SeqMCError):
    """Invalid experiment configuration."""
