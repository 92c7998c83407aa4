"""Exception hierarchy shared by all evohom modules."""


class EvohomError(Exception):
    """Base class for every error raised by this package."""


class RadiusOutOfRange(EvohomError, ValueError):
    pass


class CellLookupFailure(EvohomError, ValueError):
    pass


class MeshQualityFailure(EvohomError):
    pass


class NonConformingTiling(EvohomError):
    pass


class NonSPDCoefficient(EvohomError, ValueError):
    pass


class NoConvergence(EvohomError, RuntimeError):
    pass


class InconsistentPairs(EvohomError, ValueError):
    pass


class TimeStepTooLarge(EvohomError, ValueError):
    pass


class RadiusBoundViolation(EvohomError, RuntimeError):
    pass


class JacobianBoundViolation(EvohomError, RuntimeError):
    pass


class MissingSurface(EvohomError, ValueError):
    pass


class TableRangeError(EvohomError, ValueError):
    pass


class MismatchedTimes(EvohomError, ValueError):
    pass
