"""Quantile inference and Berry-Esseen rate verification for weakly dependent series."""

from mixquant.errors import (
    DomainError,
    ExperimentAborted,
    MixquantError,
    PlugInError,
    PreconditionError,
    ResourceCapError,
)

__version__ = "0.1.0"

__all__ = [
    "DomainError",
    "ExperimentAborted",
    "MixquantError",
    "PlugInError",
    "PreconditionError",
    "ResourceCapError",
    "__version__",
]
