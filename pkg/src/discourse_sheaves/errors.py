"""Exception types raised across the package."""


class SheafError(Exception):
    """Base class for all package errors."""


class ConformanceError(SheafError, ValueError):
    """A cochain, matrix or spec does not match the stalk dimensions of a sheaf."""


class ValidationError(SheafError, ValueError):
    """Malformed model data (bad basis, unknown incidence, bad parameter)."""


class SolvabilityError(SheafError, ArithmeticError):
    """A Poisson-type system that must be solvable produced a large residual."""


class PolicyError(ValidationError):
    """An edge policy was applied to an edge it is not defined for."""


class NumericalError(SheafError, ArithmeticError):
    """A root finder or integrator could not produce a trustworthy answer."""


class SchemaError(ValidationError):
    """A model document violates the file schema.

    ``path`` locates the offending field, e.g. ``edges[2].tail``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DimensionMismatch(SchemaError, ConformanceError):
    """A model document whose declared shapes disagree with the stalk dimensions."""
