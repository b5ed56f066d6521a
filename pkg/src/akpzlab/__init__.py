"""Spectral-Galerkin lab for the regularized 2D anisotropic KPZ equation."""

from .errors import (
    AKPZError,
    CapacityError,
    ConfigError,
    DomainError,
    IntegrationBlowup,
    NumericalError,
    ResolutionError,
)
from .kernels import KernelParams
from .spectral import FourierField, TestFunction

__version__ = "0.1.0"

__all__ = [
    "AKPZError",
    "CapacityError",
    "ConfigError",
    "DomainError",
    "FourierField",
    "IntegrationBlowup",
    "KernelParams",
    "NumericalError",
    "ResolutionError",
    "TestFunction",
    "__version__",
]
