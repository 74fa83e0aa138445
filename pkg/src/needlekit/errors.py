"""Exception types shared across the toolkit."""


class NeedlekitError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(NeedlekitError):
    """A numeric argument is outside its documented range."""


class OutOfDomainError(NeedlekitError):
    """A coordinate or window does not fit inside the ambient domain."""


class DegenerateDomainError(NeedlekitError):
    """The requested domain has zero or negative length."""


class VolumeMismatchError(NeedlekitError):
    """A recorded volume disagrees with the measured one."""


class BudgetExceededError(NeedlekitError):
    """A combinatorial search would exceed its configuration budget."""


class OverlapError(NeedlekitError):
    """Two point sets that must be disjoint intersect."""


class DegenerateBallError(NeedlekitError):
    """A metric ball is too small to carry the requested construction."""


class DegenerateRayError(NeedlekitError):
    """A transport ray is too short to support a fitted density."""


class NonConvergenceError(NeedlekitError):
    """An iterative decomposition left too much mass unexplained."""


class NoTriplesError(NeedlekitError):
    """A sweep over point triples found no admissible triple."""


class ConfigError(NeedlekitError):
    """An experiment configuration failed validation."""
