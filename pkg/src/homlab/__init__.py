"""Homogenization, coarse-graining and memory-reduction experiments."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AtomicMeasure,
    ConfigurationError,
    DiscreteKernel,
    DomainError,
    EllipticityError,
    HomlabError,
    PeriodicProfile,
    TimeKernel,
    UniformGrid,
    periodic_average,
    volterra_solve,
)

__all__ = [
    "AtomicMeasure",
    "ConfigurationError",
    "DiscreteKernel",
    "DomainError",
    "EllipticityError",
    "HomlabError",
    "PeriodicProfile",
    "TimeKernel",
    "UniformGrid",
    "periodic_average",
    "volterra_solve",
]
