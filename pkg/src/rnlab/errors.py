"""Exception types raised across the package."""


class RnlabError(Exception):
    """Base class."""


class GridMismatch(RnlabError, ValueError):
    """Samples and grid have incompatible shapes or nodes."""


class NumericalFailure(RnlabError):
    """A run produced a state the downstream formulas cannot use."""


class MonotonicityViolation(NumericalFailure):
    """Two trajectories of the flow crossed (or touched)."""


class NonFiniteState(NumericalFailure):
    pass


class MassDriftExceeded(NumericalFailure):
    pass


class QueryOutsideRange(RnlabError, ValueError):
    """Inverse-flow query outside the image of the initial grid."""


class MissingDerivative(RnlabError, ValueError):
    pass


class MissingSemimartingaleParts(RnlabError, ValueError):
    pass


class ConfigError(RnlabError, ValueError):
    pass
