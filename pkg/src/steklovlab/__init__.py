"""Numerical laboratory for scalar and modified Maxwell Steklov eigenvalue
problems in absorbing media: FEM discretization, nonselfadjoint eigensolvers,
and material-perturbation stability studies."""

__version__ = "0.1.0"

from .boundary_ops import (
    BoundaryGram,
    SurfaceOperatorSet,
    apply_S,
    assemble_boundary_form,
    assemble_surface_operators,
)
from .eigensolver import (
    EigenResult,
    SectorCensus,
    cluster,
    pencil_residual,
    sector_census,
    solve_dense_oracle,
    solve_shift_invert,
)
from .errors import (
    AssumptionViolation,
    ConfigError,
    DegenerateCluster,
    InsufficientData,
    MalformedMeshError,
    ShiftAtEigenvalue,
    SolverFailure,
)
from .fem_maxwell import (
    MaxwellPencil,
    ProjectionResult,
    assemble_maxwell,
    discrete_gradient,
    kernelS_diagnostic,
    project_Vh,
)
from .fem_scalar import (
    ScalarPencil,
    assemble_scalar,
    dump_matrix_market,
    scalar_dirichlet_diagnostic,
)
from .materials import (
    MaterialField,
    MaterialReport,
    PerturbationSpec,
    build_field,
    lp_diff_norm,
    validate,
)
from .mesh import (
    Mesh,
    SurfaceMesh,
    extract_boundary,
    generate_ball_mesh,
    generate_cube_mesh,
    load_mesh,
    refine_uniform,
    save_mesh,
)
from .stability import (
    FitResult,
    StudyReport,
    StudySetup,
    first_order_prediction,
    fit_rate,
    nondegeneracy,
    run_study,
)

__all__ = [
    "AssumptionViolation",
    "BoundaryGram",
    "ConfigError",
    "DegenerateCluster",
    "EigenResult",
    "FitResult",
    "InsufficientData",
    "MalformedMeshError",
    "MaterialField",
    "MaterialReport",
    "MaxwellPencil",
    "Mesh",
    "PerturbationSpec",
    "ProjectionResult",
    "ScalarPencil",
    "SectorCensus",
    "ShiftAtEigenvalue",
    "SolverFailure",
    "StudyReport",
    "StudySetup",
    "SurfaceMesh",
    "SurfaceOperatorSet",
    "apply_S",
    "assemble_boundary_form",
    "assemble_maxwell",
    "assemble_scalar",
    "assemble_surface_operators",
    "build_field",
    "cluster",
    "discrete_gradient",
    "dump_matrix_market",
    "extract_boundary",
    "first_order_prediction",
    "fit_rate",
    "generate_ball_mesh",
    "generate_cube_mesh",
    "kernelS_diagnostic",
    "load_mesh",
    "lp_diff_norm",
    "nondegeneracy",
    "pencil_residual",
    "project_Vh",
    "refine_uniform",
    "run_study",
    "save_mesh",
    "scalar_dirichlet_diagnostic",
    "sector_census",
    "solve_dense_oracle",
    "solve_shift_invert",
    "validate",
]
