"""Exception hierarchy shared by the solvers, diagnostics and command line."""


class NonlocalLWRError(Exception):
    """Base class for all package errors."""


class DomainError(NonlocalLWRError, ValueError):
    """An argument lies outside the domain of the model function."""


class ControlInfeasibleError(DomainError):
    """The requested equilibrium speed cannot be stabilized (vbar >= v(0))."""


class ConfigurationError(NonlocalLWRError, ValueError):
    """Inconsistent scenario, grid or discretization parameters."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MaxPrincipleViolation(NonlocalLWRError, RuntimeError):
    """A density left the admissible range after a time step."""

    def __init__(self, message, cell=None, step=None):
        self.cell = cell
        self.step = step
        super().__init__(message)


class StepSizeError(NonlocalLWRError, RuntimeError):
    """A particle step reordered vehicles; retry with a smaller step."""


class UnsupportedKernelError(NonlocalLWRError, ValueError):
    """Operation is only defined for the constant kernel."""
