"""Exception hierarchy shared by every dcgsim module."""


class DcgError(Exception):
    """Base class for all dcgsim errors."""


# linalg

class SingularMatrix(DcgError, ArithmeticError):
    pass


class ZeroDiagonal(DcgError, ValueError):
    pass


class NoConvergence(DcgError, ArithmeticError):
    """Power iteration ran out of iterations; ``best`` holds the last estimate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class OutOfDomain(DcgError, ValueError):
    pass


class NotSymmetric(DcgError, ValueError):
    pass


class NotPositiveDefinite(DcgError, ValueError):
    pass


# network / simulator

class Disconnected(DcgError, ValueError):
    pass


class NonNeighborSend(DcgError, RuntimeError):
    pass


# solvers

class InconsistentShare(DcgError, RuntimeError):
    pass


class Incomplete(DcgError, RuntimeError):
    pass


class MissingNeighborState(DcgError, KeyError):
    pass


class ZeroPrevResidual(DcgError, ArithmeticError):
    pass


class ZeroCurvature(DcgError, ArithmeticError):
    pass


class DivergenceDetected(DcgError, ArithmeticError):
    def __init__(self, message, round=None):
        super().__init__(message)
        self.round = round


# applications

class SparsityViolation(DcgError, ValueError):
    pass


class DegenerateGeometry(DcgError, ValueError):
    pass


class InsufficientNeighbors(DcgError, ValueError):
    pass


# experiment

class DisconnectedNetwork(DcgError, RuntimeError):
    pass
