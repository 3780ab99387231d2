"""Exception hierarchy shared by all modules.

Numerical failures (quadrature, overflow, table range) map to CLI exit code 3;
configuration and domain errors map to exit code 2.
"""


class PamError(Exception):
    """Base class for every error raised by pamclt."""


class ConfigError(PamError, ValueError):
    pass


class DomainError(PamError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UnsupportedRegime(PamError, ValueError):
    pass


class GridMismatch(PamError, ValueError):
    pass


class RangeError(PamError, ValueError):
    pass


class NumericalFailure(PamError, ArithmeticError):
    """Base for failures that should produce exit status 3."""


class QuadratureFailure(NumericalFailure):
    pass


class DivergenceError(NumericalFailure):
    pass


class OverflowGuard(NumericalFailure):
    pass


class TableRangeError(NumericalFailure):
    pass


class InsufficientReplicates(PamError, ValueError):
    pass


class InsufficientSamples(PamError, ValueError):
    pass


class DegenerateFit(NumericalFailure):
    pass


class TailWarning(UserWarning):
    """The tabulated correlation has not decayed at the edge of the lag grid."""
