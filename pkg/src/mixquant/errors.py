"""Exception hierarchy shared across the package."""


class MixquantError(Exception):
    """Base class for all package errors."""


class DomainError(MixquantError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class PreconditionError(MixquantError):
    """A documented precondition of an experiment or check does not hold."""


class ResourceCapError(MixquantError, MemoryError):
    """A computation would exceed its configured memory cap."""


class PlugInError(MixquantError, ArithmeticError):
    """The variance plug-in of a confidence interval degenerated."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ExperimentAborted(MixquantError):
    """An experiment exceeded its tolerated failure rate."""
