"""Exception hierarchy shared by all modules."""


class CritSobError(Exception):
    """Base class for every error raised by the library."""


class DomainMismatch(CritSobError):
    pass


class InvalidExponent(CritSobError):
    pass


class NonCoercive(CritSobError):
    """The Dirichlet operator -Laplace + a is not positive definite."""


class ShootingFailure(CritSobError):
    pass


class LinearSolveFailure(CritSobError):
    pass


class PoleMismatch(CritSobError):
    pass


class IllConditionedGram(CritSobError):
    pass


class ZeroField(CritSobError):
    pass


class EigenSolveFailure(CritSobError):
    pass


class EmptyZeroSet(CritSobError):
    pass


class InsufficientSweep(CritSobError):
    pass


class SingularDesign(CritSobError):
    pass


class FitDegenerate(CritSobError):
    pass


class DivisionUnstable(CritSobError):
    pass


class ConfigError(CritSobError):
    pass
