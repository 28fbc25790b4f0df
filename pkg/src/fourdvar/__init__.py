"""4D-Var data assimilation for quasilinear parabolic PDEs on the unit interval."""

from .assimilation import (
    CostReport,
    HessianReport,
    Problem,
    assemble_hessian,
    cost_and_grad,
    eval_cost,
    fixed_point_map,
    grad_cost,
    hessian_quadratic_form,
    hessian_terms,
    second_variation_pairing,
    twin_observations,
)
from .bayes import Chain, KLExpansion, log_density_ratio, pcn_sample, sample_prior
from .certificates import (
    BoundCheckReport,
    CertificateReport,
    construct_saddle,
    convexity_certificate,
    pointwise_bound,
    sigma_threshold,
    time_threshold,
    verify_apriori_bounds,
)
from .estimator import VariationalAssimilator
from .grid import Grid, TimeMesh
from .model import ModelSpec, check_global_existence, make_model
from .observations import ObservationSet, PriorSpec
from .optimize import CriticalPointCatalog, OptimizeResult, minimize, multistart
from .pde import (
    BlowUpError,
    SolverError,
    solve_adjoint,
    solve_forward,
    solve_second_variation,
    solve_tangent,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
