"""Exception types raised across the package."""


class AdmmError(Exception):
    """Base class for every error raised by mbadmm."""


class DimensionMismatch(AdmmError, ValueError):
    pass


class InvalidSet(AdmmError, ValueError):
    pass


class NonPSD(AdmmError, ValueError):
    pass


class CrossedBounds(InvalidSet):
    pass


class NegativeCap(InvalidSet):
    pass


class MaxIterExceeded(AdmmError):
    """Iteration budget ran out; ``best`` holds the last (best) iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NonFiniteEncountered(AdmmError, ArithmeticError):
    pass


class SingularKkt(AdmmError, ArithmeticError):
    pass


class Infeasible(AdmmError):
    pass


class UnsupportedSubproblem(AdmmError, TypeError):
    pass


class SingularBlock(AdmmError, ValueError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class ObserverFailure(AdmmError):
    pass


class SequentialEngineRejected(AdmmError, ValueError):
    pass


class ParseError(AdmmError, ValueError):
    pass


class InvalidCase(AdmmError, ValueError):
    pass


class Disconnected(InvalidCase):
    pass


class InfeasibleScenario(Infeasible):
    def __init__(self, message, scenario=None):
        super().__init__(message)
        self.scenario = scenario


class InvalidDims(AdmmError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass
