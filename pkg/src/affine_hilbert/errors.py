"""Exception hierarchy shared by all modules."""


class AffineError(Exception):
    """Base class for library errors."""


class DomainError(AffineError, ValueError):
    """An input lies outside the domain an operation is defined on."""


class NumericalError(AffineError, ArithmeticError):
    """A numerical routine failed (eigensolver, non-finite state, ...)."""


class ConstructionError(AffineError, ValueError):
    """Parameters or operators could not be assembled consistently."""


class SolverDivergenceError(NumericalError):
    """A Riccati certificate was violated during integration."""

    def __init__(self, message, time=None, residual=None, certificate=None):
        super().__init__(message)
        self.time = time
        self.residual = residual
        self.certificate = certificate


class StiffnessError(NumericalError):
    """The adaptive integrator could not make progress."""


class BlowUpError(NumericalError):
    """A simulated state became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
