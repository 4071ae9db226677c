"""Exception hierarchy shared by all qbmsim modules."""


class QBMError(Exception):
    """Base class for every error raised by qbmsim."""


class ConfigurationError(QBMError, ValueError):
    """Invalid parameters or an operation applied to the wrong model family."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DomainError(QBMError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DegenerateRootsError(DomainError):
    """The characteristic roots of the Riccati linearisation coincide."""


class InvertedPotentialError(DomainError):
    """The controlled mode has a negative squared frequency."""


class NumericalError(QBMError, ArithmeticError):
    """A numerical procedure failed to reach its tolerance."""


class ConvergenceError(NumericalError):
    """Iterative corrector did not converge; ``time`` names the offending step."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class KernelValidityError(NumericalError):
    """A sampled correlation kernel is not positive semidefinite on its grid."""


class TruncationError(QBMError, ValueError):
    """Fock-space truncation too small for the requested state or dynamics."""

    def __init__(self, message, required_levels=None):
        super().__init__(message)
        self.required_levels = required_levels


class TruncationWarning(UserWarning):
    """Population near the truncation edge exceeds the warning threshold."""


class PhysicalityError(NumericalError):
    """A covariance matrix violated the uncertainty principle beyond tolerance."""


class RunError(QBMError, RuntimeError):
    """A simulation run was aborted; ``diagnostics`` carries the reason."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
