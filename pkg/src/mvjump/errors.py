"""Exception hierarchy shared by every mvjump module."""


class MvJumpError(Exception):
    """Base class for all library errors."""


class ModelError(MvJumpError, ValueError):
    """A market model violates one of its invariants."""


class DriftDominance(ModelError):
    pass


class DegenerateNoise(ModelError):
    pass


class BadIntensity(ModelError):
    pass


class BadHorizon(ModelError):
    pass


class BadWealth(ModelError):
    pass


class BadCurve(ModelError):
    pass


class ReversedLimits(MvJumpError, ValueError):
    pass


class NonFinite(MvJumpError, ArithmeticError):
    def __init__(self, message: str, path_index: int | None = None):
        super().__init__(message)
        self.path_index = path_index


class NoConvergence(MvJumpError, ArithmeticError):
    pass


class MismatchedSpec(MvJumpError, ValueError):
    pass
