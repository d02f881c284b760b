"""Opinion dynamics on discourse sheaves with directional stubbornness."""

from .errors import (
    ConformanceError,
    NumericalError,
    PolicyError,
    SchemaError,
    SheafError,
    SolvabilityError,
    ValidationError,
)
from .free_opinions import (
    StubbornSpec,
    build_free_sheaf,
    compatibility_obstruction,
    constrained_diffuse,
    exact_sequence_audit,
    solve_poisson,
)
from .sheaf import (
    Graph,
    Sheaf,
    betti_numbers,
    build_sheaf,
    coboundary,
    coboundary_matrix,
    diffuse,
    disagreement_energy,
    global_sections,
    laplacian,
    project_h0,
)

__version__ = "0.1.0"
