"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the requested operation."""


class ConvergenceError(ArithmeticError):
    """A numerical procedure failed to reach its tolerance.

    ``diagnostics`` carries whatever the failing routine knew at the time
    (estimates, error bounds, iteration counts).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigurationError(ValueError):
    """A simulation configuration cannot produce valid samples."""
