"""Numerical lab for spatial averages of the parabolic Anderson model."""

__version__ = "0.1.0"

from .covariance_model import CovarianceModel, TestFunction  # noqa: E402
from .errors import ConfigError, DomainError, NumericalFailure, PamError  # noqa: E402
from .field_synth import GridSpec, NoiseField, synthesize  # noqa: E402

__all__ = ["CovarianceModel", "TestFunction", "GridSpec", "NoiseField", "synthesize",
           "PamError", "ConfigError", "DomainError", "NumericalFailure", "__version__"]
