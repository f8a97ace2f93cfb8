"""Exception types shared across the package."""


class RilabError(Exception):
    """Base class for package errors."""


class ToleranceNotReached(RilabError):
    """A numerical routine could not certify the requested tolerance."""


class GreenRadiusError(RilabError):
    """A difference vector lies outside the range covered by a Green table."""


class InadmissiblePotential(RilabError):
    """The potential violates ``||G|V|||_inf < 1`` (or the working margin)."""


class PreconditionError(RilabError):
    """An operation was called outside its domain."""


class ConditioningTooRare(RilabError):
    """Rejection sampling found fewer conditioned replicas than required."""


class BudgetExceeded(RilabError):
    """A Monte Carlo or exact solve budget was exhausted."""


class ConfigError(RilabError):
    """Invalid run configuration."""
