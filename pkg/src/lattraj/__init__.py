"""Stochastic trajectories of lattice particles under continuous position measurement.

The package simulates N bosons, fermions or distinguishable particles hopping
on an open 1D lattice while a spatially resolved optical signal is monitored
in real time.  Two unravelings of the conditioned dynamics are provided (the
photodetection jump process and its weak-resolution diffusive limit), together
with deterministic master-equation integrators and closed-form results used as
verification oracles.
"""

from .diffusive import (
    DiffusiveParams,
    diffusive_params,
    run_diffusive_trajectory,
    sse_step_dist,
    sse_step_indist,
    trajectory_generator,
)
from .ensemble import (
    DiffusionFit,
    fit_diffusion_constant,
    fit_diffusion_distribution,
    pair_correlation,
    pair_correlation_normal_ordered,
    relative_distance_variance,
    run_ensemble,
    run_unitary_trajectory,
)
from .errors import (
    CapacityError,
    ConfigError,
    DegenerateRateError,
    DiffusionFitError,
    DimensionMismatchError,
    LatTrajError,
    ResolutionFitError,
    StatisticsError,
    StepSizeError,
)
from .hilbert import (
    FockBasis,
    Operator,
    Statistics,
    SystemSpec,
    basis_dimension,
    build_hamiltonian,
    build_number_operator,
    build_position_operator,
    build_xcm_operator,
    enumerate_basis,
    expectation,
    fock_state,
    normalize,
    superposition_state,
)
from .jump import (
    apply_jump,
    evolve_nocount,
    nocount_generator,
    run_jump_trajectory,
    sample_jump_time,
)
from .master import (
    MasterSpec,
    MasterVariant,
    ballistic_variance,
    build_master,
    collapse_time,
    evolve_unitary,
    free_walk_density,
    integrate_master,
    lindblad_rhs,
    onsite_diffusion_constant,
    relative_diffusion_constant,
    site_resolved_strength,
)
from .measurement import (
    MeasurementModel,
    PointSpreadFunction,
    build_measurement_model,
    effective_resolution,
    gaussian_psf,
    integrated_mdagm,
    load_tabulated_psf,
    measurement_operator,
    outcome_distribution,
    tabulated_psf,
)
from .records import EnsembleResult, JumpEvent, TrajectoryRecord

__version__ = "0.1.0"
