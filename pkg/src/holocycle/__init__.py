"""Numerical approximation of holonomic measures by cycles on flat tori."""

from .geometry import (
    DifferentialForm,
    DimensionMismatchError,
    FlatTorus,
    InvalidInputError,
    TangentTuple,
    TrigPolynomial,
    form_basis,
    gram_volume,
    torus_distance,
    tuple_distance,
)
from .measures import (
    DiscreteMeasure,
    SmoothDensityModel,
    TestFamily,
    convolve,
    dist,
    hol_residual,
    kernel_density_model,
    read_measure,
    sample_density,
    velocity_bump_model,
    write_measure,
)
from .chains import (
    AffineMap,
    Box,
    Cell,
    Chain,
    boundary,
    cell_measure,
    chain_from_dict,
    chain_measure,
    chain_to_dict,
    is_cycle,
    reparameterize_mass_matched,
)
from .triangulation import (
    TorusTriangulation,
    TransversalityError,
    boundary_balance,
    slice_measure,
)
from .approximation import (
    PipelineConfig,
    approximate,
    base_measure,
    close_up,
    isoperimetric_fill,
    sample_cells,
)
from .foliations import (
    AlmostComplexGrid,
    DensityCandidate,
    VectorFieldSet,
    commutator_residual,
    foliation_to_measure,
    frobenius_residual,
    pseudoholomorphic_construct,
    solve_density,
)

__all__ = [
    "AffineMap",
    "AlmostComplexGrid",
    "Box",
    "Cell",
    "Chain",
    "DensityCandidate",
    "PipelineConfig",
    "TorusTriangulation",
    "TransversalityError",
    "VectorFieldSet",
    "approximate",
    "base_measure",
    "boundary",
    "boundary_balance",
    "cell_measure",
    "chain_from_dict",
    "chain_measure",
    "chain_to_dict",
    "close_up",
    "commutator_residual",
    "foliation_to_measure",
    "frobenius_residual",
    "is_cycle",
    "isoperimetric_fill",
    "kernel_density_model",
    "pseudoholomorphic_construct",
    "reparameterize_mass_matched",
    "sample_cells",
    "slice_measure",
    "solve_density",
    "velocity_bump_model",
    "DifferentialForm",
    "DimensionMismatchError",
    "DiscreteMeasure",
    "FlatTorus",
    "InvalidInputError",
    "SmoothDensityModel",
    "TangentTuple",
    "TestFamily",
    "TrigPolynomial",
    "convolve",
    "dist",
    "form_basis",
    "gram_volume",
    "hol_residual",
    "read_measure",
    "sample_density",
    "torus_distance",
    "tuple_distance",
    "write_measure",
]

__version__ = "0.1.0"
