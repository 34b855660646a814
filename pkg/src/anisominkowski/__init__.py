"""Numerical anisotropic Minkowski problem.

Given a Minkowski norm F and a positive curvature function K on its Wulff
shape, solve the Monge-Ampere equation for the anisotropic support function,
rebuild the convex body and check the identities and inequalities it must
satisfy.
"""

from .body import (
    BodyMesh,
    body_curvature,
    body_measures,
    inequality_report,
    reconstruct,
    roundtrip_error,
)
from .config import RunConfig, load_config, validate_config
from .errors import (
    AdmissibilityLost,
    ClosureViolated,
    ConfigError,
    ContinuationStalled,
    DegenerateBody,
    Inadmissible,
    InvalidModel,
    IoError,
    LinearSolveFailure,
    MaxIterations,
    MeshBuildFailure,
    MeshMismatch,
    MinkowskiError,
    NoConvergence,
    NonPositiveField,
    NonPositiveK,
    SingularGram,
    SolverFailure,
    ZeroVector,
)
from .norms import NormModel, dual_eval, norm_eval, verify_norm
from .solver import (
    AdmissibleState,
    SolveReport,
    SolverOptions,
    apriori_bounds,
    assemble_state,
    continuation_solve,
    enforce_ortho,
    linearized_operator,
    newton_solve,
    residual_field,
    self_adjointness_defect,
)
from .wulff import (
    ScalarField,
    WulffMesh,
    build_mesh,
    closure_residual,
    differentiate,
    geometry_selfcheck,
    integrate_mu,
    mesh_table,
)

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "load_config",
    "validate_config",
    "NormModel",
    "dual_eval",
    "norm_eval",
    "verify_norm",
    "BodyMesh",
    "body_curvature",
    "body_measures",
    "inequality_report",
    "reconstruct",
    "roundtrip_error",
    "AdmissibilityLost",
    "ClosureViolated",
    "ConfigError",
    "ContinuationStalled",
    "DegenerateBody",
    "Inadmissible",
    "InvalidModel",
    "IoError",
    "LinearSolveFailure",
    "MaxIterations",
    "MeshBuildFailure",
    "MeshMismatch",
    "MinkowskiError",
    "NoConvergence",
    "NonPositiveField",
    "NonPositiveK",
    "SingularGram",
    "SolverFailure",
    "ZeroVector",
    "AdmissibleState",
    "SolveReport",
    "SolverOptions",
    "apriori_bounds",
    "assemble_state",
    "continuation_solve",
    "enforce_ortho",
    "linearized_operator",
    "newton_solve",
    "residual_field",
    "self_adjointness_defect",
    "ScalarField",
    "WulffMesh",
    "build_mesh",
    "closure_residual",
    "differentiate",
    "geometry_selfcheck",
    "integrate_mu",
    "mesh_table",
]
