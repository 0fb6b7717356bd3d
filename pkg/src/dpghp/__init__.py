"""Anisotropic hp-adaptive DPG toolkit for convection-diffusion problems."""

from .mesh import (
    AnisotropyParams,
    HpMesh,
    MeshError,
    MeshFormatError,
    MetricTensor,
    Patch,
    Triangulation,
    build_patch,
    element_metric,
    lshape_mesh,
    mesh_complexity,
    metric_compose,
    metric_decompose,
    read_native,
    unit_square_mesh,
    write_native,
)
from .basis import (
    QuadratureRule,
    ReferenceBasis,
    SpaceLayout,
    build_layout,
    eval_basis,
    quadrature_rule,
)
from .solver import (
    ErrorRepresentation,
    GlobalSolution,
    LocalSystem,
    SolveError,
    UltraWeakProblem,
    assemble_local,
    energy_error,
    error_norms,
    error_representation,
    gram_scaled_vnorm,
    sample_raster,
    solve_global,
)
from .goal import (
    DualSolution,
    TargetFunctional,
    dwr_estimate,
    evaluate_target,
    goal_indicator,
    solve_dual,
    star_indicator,
)
from .anisotropy import (
    AnisotropyResult,
    LocalErrorModel,
    anisotropy_bound,
    build_error_model,
    optimize_anisotropy,
)
from .hp_model import (
    ContinuousModel,
    DensityField,
    OrderSelection,
    bisect_const,
    build_metric_field,
    compute_abar,
    optimal_density,
    order_selection_pass,
    select_order,
    solve_patch_at_order,
)
from .remesh import (
    RemeshReport,
    interchange_read,
    interchange_write,
    remesh_internal,
    transfer_orders,
)
from .problems import ProblemSpec, make_problem, verify_manufactured
from .driver import (
    AdaptConfig,
    ConvergenceRecord,
    emit_reports,
    fit_exponential,
    run_adaptation,
)

__version__ = "0.1.0"
