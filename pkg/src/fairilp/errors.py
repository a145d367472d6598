class FairIlpError(Exception):
    """Base class for all errors raised by this package."""


class Infeasible(FairIlpError):
    pass


class Unbounded(FairIlpError):
    pass


class TimeLimit(FairIlpError):
    pass


class SolverError(FairIlpError):
    pass


class InvalidInstance(FairIlpError):
    pass


class InvalidEpsilon(FairIlpError):
    pass


class DimensionMismatch(FairIlpError):
    pass


class NotRealizable(FairIlpError):
    pass


class EmptyPool(FairIlpError):
    pass


class PoolIncomplete(FairIlpError):
    pass


class CoverageError(FairIlpError):
    """The initial column pool misses an agent whose probability must be positive."""


class GradientUndefined(FairIlpError):
    pass


class NonConvergence(FairIlpError):
    pass


class TooLargeForExact(FairIlpError):
    pass


class NonIntegerObjective(FairIlpError):
    pass


class ConfigError(FairIlpError):
    pass
