"""Exception hierarchy. The CLI maps these to exit codes."""


class ProxyBoundsError(Exception):
    """Base class for every error raised by this package."""


class ParseError(ProxyBoundsError):
    pass


class ValidationError(ProxyBoundsError):
    pass


class NotInvertible(ProxyBoundsError):
    pass


class NegativeRecovery(ProxyBoundsError):
    pass


class DomainError(ProxyBoundsError):
    pass


class DegenerateSimplex(ProxyBoundsError):
    pass


class NumericalBreakdown(ProxyBoundsError):
    pass


class EmptyFeasibleRegion(ProxyBoundsError):
    pass


class InfeasibleStart(ProxyBoundsError):
    pass


class UnsupportedDimension(ProxyBoundsError):
    pass


class MissingOutcomeValues(ProxyBoundsError):
    pass


class ShapeMismatch(ProxyBoundsError):
    pass
