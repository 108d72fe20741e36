"""Separable least-squares toolkit: models, variable projection, basin geometry."""

from .model import (
    FeasibleBox,
    HessianSplit,
    ModelDims,
    Provenance,
    SeparableModel,
    SpectralConstants,
    Theta,
    assemble_dictionary,
    auxiliary_metrics,
    estimate_spectral_constants,
    hessian,
    jacobian,
    loss,
    residual,
    unmixing_metric,
)
from .kernels import (
    GaussianKernel,
    Kernel,
    ULaplaceKernel,
    UnitSpeedKernel,
    arc_length,
    inverse_arc_length,
    unit_speed_wrap,
)
from .psf import (
    PsfModel,
    SamplingGrid,
    SupportDictionary,
    block_operator_norms,
    build_psf_model,
    minimal_separation,
    sample_support,
    spectral_constants_psf,
)
from .coherence import (
    CoherenceProfile,
    build_coherence_profile,
    coherence,
    coherence_sigma_bound,
    delta_correlation,
)
from .varpro import (
    LiftedPoint,
    LiftingDerivative,
    lifting_derivative,
    linear_solve,
    projected_gradient,
    projected_hessian,
    projected_jacobian,
    projected_loss,
    sigma_min_tilde,
)
from .geometry import (
    BasinConstants,
    BasinReport,
    RadiusMetric,
    VpConstants,
    basin_constants,
    coupling_factor,
    empirical_convergence_radius,
    hessian_perturbation_bound,
    monte_carlo_basin,
    radii_comparison,
    radius_alpha_ls,
    radius_vp_noiseless,
    radius_vp_noisy,
    residual_hessian_bound,
    rho_lift_bound,
    stability_bound_ls,
    stability_bound_vp,
    vp_constants,
    weyl_probe,
)
from .solvers import (
    ResidualObjective,
    SolveStatus,
    SolverKind,
    SolverOptions,
    Trace,
    joint_objective,
    recovery_success,
    solve,
    varpro_objective,
)
from .experiments import ExperimentConfig, generate_noise, run_experiment

__version__ = "0.1.0"
