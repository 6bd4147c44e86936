"""Recalibrated and adaptively compensated ensemble Kalman filtering.

Conventional stochastic/square-root ensemble Kalman filters plus two update
refinements -- re-evaluating the measurement statistics at the updated mean
(with a variance-based back-out), and an online rank-one compensation of the
innovation covariance tuned from the innovation consistency statistic --
together with a Monte-Carlo benchmark harness for a planar range-bearing
SLAM problem and the Lorenz-96 system.
"""
from .benchmarks import (
    Lorenz96Model,
    Observation,
    SlamModel,
    TruthTrajectory,
    lorenz96_rhs,
    make_initial_ensemble,
    make_truth,
    rk4_step,
)
from .ensemble import (
    Ensemble,
    EnsembleStats,
    InvalidRho,
    NonFiniteState,
    inflate,
    propagate,
    recenter,
    stats,
)
from .filters import (
    CompensationState,
    EnsembleFilter,
    FilterConfig,
    Mode,
    StepReport,
    Variant,
    filter_step,
)
from .harness import (
    AggregateResult,
    ConfigError,
    ExperimentConfig,
    RunRecord,
    SweepRow,
    run_experiment,
    run_single,
    run_sweep,
)
from .linalg import (
    GaussianSampler,
    NotPSD,
    NotPositiveDefinite,
    run_seed,
    sample_gaussian,
    sample_gaussian_rank1,
    spd_solve,
    sym_sqrt_psd,
)
from .measurement import (
    EmptyMeasurement,
    InnovationCov,
    MeasStats,
    innovation_cov,
    kalman_gain,
    measure_stats,
    wrap_angle,
)
from .reporting import LineSeries, emit_curve_csv, emit_plot, emit_sweep_csv

__version__ = "0.1.0"
