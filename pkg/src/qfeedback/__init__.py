"""Feedback control of continuously monitored quantum systems.

Conditional-state propagation for qubits, oscillators and lattice atoms,
the matching classical filters (Kalman-Bucy, grid-based nonlinear), LQG
synthesis with measurement back-action, adaptive-measurement strategies
(rapid purification, photon-counting pulse discrimination), and two
end-to-end cooling scenarios, all behind a deterministic batch CLI.
"""

__version__ = "0.1.0"

from .adaptive import (
    DolinarConfig,
    PurificationStats,
    QubitFeedbackPolicy,
    dolinar_simulate,
    fixed_policy,
    helstrom_bound,
    optimal_static_beta,
    purification_experiment,
    rapid_policy,
    rapid_purify_step,
)
from .cooling import (
    AtomLatticeScenario,
    AtomOutcome,
    CoolingOutcome,
    ResonatorOutcome,
    ResonatorScenario,
    bang_bang_decision,
    run_atom_cooling,
    run_resonator_cooling,
    thermal_momentum_diffusion,
)
from .errors import (
    AsymmetricGrid,
    CFLViolation,
    CovarianceBlowup,
    DimensionMismatch,
    GridTooCoarse,
    GridUnderResolved,
    MinimumOnBoundary,
    MissingKey,
    NegativeDensity,
    NoConvergence,
    NonNegligibleImaginaryPart,
    NonPositiveGamma,
    NotStabilizable,
    QFeedbackError,
    SegmentTooCoarse,
    StatePositivityViolation,
    TargetNotReached,
    TrajectoryFailure,
    TruncationLeak,
    UnknownKey,
    UnknownScenario,
)
from .filters import (
    GaussianBelief,
    GridBelief,
    LinearMeasuredModel,
    kalman_bucy_step,
    ks_grid_step,
    measured_oscillator_model,
    sme_step,
    sme_step_raw,
)
from .lqg import (
    ControlLaw,
    OptimizationResult,
    QuadraticCost,
    optimize_measurement_strength,
    solve_care,
    steady_filter_cov,
    synthesize_lqg,
)
from .states import (
    DensityMatrix,
    FockBasis,
    GridBasis,
    ObservableOperator,
    PhysicalConstants,
    QubitBasis,
    build_lattice,
    build_oscillator,
    coherent_state,
    expectation,
    fock_state,
    gaussian_packet,
    grid_eigenstates,
    maximally_mixed,
    number_operator,
    parity_expectation,
    parity_operator,
    pauli_operators,
    purity,
    qubit_density,
    repair_psd,
    thermal_state,
    von_neumann_entropy,
)
from .stochastic import (
    EnsembleResult,
    MeasurementRecord,
    NoiseStream,
    TrajectoryConfig,
    block_generator,
    innovations_from_record,
    run_ensemble,
    synthesize_record,
    trajectory_seed,
    wiener_increments,
)
