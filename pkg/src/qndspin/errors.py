"""Exception hierarchy shared by every module."""


class QNDError(Exception):
    """Base class for all package errors."""


class DomainError(QNDError, ValueError):
    """Input outside the domain where a formula is defined."""


class NearResonanceError(DomainError):
    """Probe detuning too close to a hyperfine line for the dispersive model."""


class UncancellableError(DomainError):
    """Tensor light shifts of the two colors share a sign and cannot cancel."""


class NumericalAbort(QNDError, RuntimeError):
    """Integration went unstable; carries diagnostics and any partial output."""

    def __init__(self, message, diagnostics=None, partial=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.partial = partial


class ConfigError(QNDError, ValueError):
    """Configuration failed validation; ``errors`` lists every problem found."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
