"""Quantum Brownian motion with a Gaussian bath.

Stochastic (Langevin) trajectories, deterministic Green-function and
closed-time-path correlators, time-dependent master-equation coefficients
and a phase-space transport solver, all on one uniform time grid.
"""

from ._kernels import BACKEND
from .coefficients import (
    CoefficientTable,
    GaussianState,
    coefficient_table,
    diffusion_b,
    diffusion_c,
    dissipation_a,
    evolve_gaussian,
    frequency_shift,
    moment_rhs,
)
from .config import ExperimentConfig, parse_config, parse_config_text
from .ctp import (
    CTPSources,
    CorrelatorResult,
    correlator_scan,
    ctp_derivative_correlator,
    eval_ctp,
    markov_gap,
    n_point_symmetrized,
    noise_quadratic,
    symmetrized_two_point,
)
from .errors import *  # noqa: F401,F403
from .grid_kernels import (
    InfluenceKernels,
    KernelMatrix,
    SpectralDensity,
    SystemParams,
    TimeGrid,
    build_dissipation_kernel,
    build_noise_kernel,
    local_noise,
    make_time_grid,
    preset_kernels,
    trapezoid_weights,
)
from .langevin import (
    InitialDistribution,
    NoiseFactor,
    TrajectoryEnsemble,
    WignerEstimate,
    estimate_moments,
    estimate_wigner,
    factor_noise,
    novikov_check,
    run_ensemble,
    sample_initial,
    sample_noise,
    simulate_trajectory,
    stochastic_correlator,
    stochastic_npoint,
)
from .phase_space import (
    ComparisonReport,
    PhaseGrid,
    WignerField,
    cat_wigner,
    compare_wigner,
    evolve_fp,
    field_moments,
    gaussian_wigner,
    negative_mass,
)
from .volterra import (
    BoundaryPair,
    GreenTable,
    Trajectory,
    boundary_solutions,
    build_advanced_green,
    build_retarded_green,
    compose_trajectory,
    representation_gap,
    solve_homogeneous_ivp,
    solve_inhomogeneous,
)

__version__ = "0.1.0"
