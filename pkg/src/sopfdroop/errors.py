"""Exception types shared across the package."""


class SopfDroopError(Exception):
    """Base class for all package errors."""


class NetworkParseError(SopfDroopError):
    """Network file is missing, empty, or not valid against the schema."""


class NetworkValidationError(SopfDroopError):
    """Network violates one or more model invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = ", ".join(f"{v.code}({v.element})" for v in self.violations)
        super().__init__(f"invalid network: {lines}")


class DimensionError(SopfDroopError, ValueError):
    pass


class PreconditionError(SopfDroopError, ValueError):
    pass


class ConvergenceError(SopfDroopError):
    """Newton iteration did not reach tolerance; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SingularJacobianError(ConvergenceError):
    """Jacobian became singular, typically close to voltage collapse."""


class InfeasibleError(SopfDroopError):
    def __init__(self, message, constraint=None, violation=None):
        super().__init__(message)
        self.constraint = constraint
        self.violation = violation


class SolverStallError(SopfDroopError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ZoneError(SopfDroopError, ValueError):
    """Empty or degenerate operating zone in an archive."""

    def __init__(self, message, zone=None):
        super().__init__(message)
        self.zone = zone


class MomentError(SopfDroopError, ValueError):
    """Requested mean/variance pair admits no Beta law on (0, 1)."""
