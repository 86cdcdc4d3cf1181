"""Exception types shared across the package."""


class KillingFEMError(Exception):
    """Base class for all package errors."""


class ConfigError(KillingFEMError):
    """Invalid domain, problem, or run configuration."""


class MeshParseError(KillingFEMError):
    """Malformed mesh file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegeneracyError(KillingFEMError):
    """The level-set gradient is too small to define a unit normal."""

    def __init__(self, point, norm, c_min):
        super().__init__(
            f"|grad phi| = {norm:.3e} < c_min = {c_min:g} at ({point[0]:.6g}, {point[1]:.6g})"
        )
        self.point = tuple(float(p) for p in point)
        self.norm = float(norm)
        self.c_min = float(c_min)


class SolverError(KillingFEMError):
    """Factorization or solve failure of the saddle-point system."""


class EvaluationError(KillingFEMError):
    """A function could not be evaluated at a requested point."""
