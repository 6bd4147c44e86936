"""Monte-Carlo experiment orchestration over the benchmark models."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .benchmarks import (
    STREAM_ENSEMBLE_INIT,
    STREAM_FILTER,
    Lorenz96Model,
    SlamModel,
    make_initial_ensemble,
    make_truth,
)
from .ensemble import NonFiniteState
from .filters import EnsembleFilter, FilterConfig, Mode, Variant
from .linalg import GaussianSampler, run_seed

__all__ = [
    "ConfigError",
    "BENCHMARKS",
    "DEFAULT_SWEEP_SCALES",
    "TRANSIENT_STEPS",
    "ExperimentConfig",
    "RunRecord",
    "AggregateResult",
    "SweepRow",
    "build_model",
    "make_filter_config",
    "run_single",
    "run_experiment",
    "run_sweep",
]


class ConfigError(Exception):
    """Invalid experiment configuration."""


BENCHMARKS = ("slam", "lorenz96")

# measurement-noise scale grid: 10^-1 to 10^2 in quarter-decade steps
DEFAULT_SWEEP_SCALES = tuple(float(s) for s in np.logspace(-1.0, 2.0, 13))

# steps 1..TRANSIENT_STEPS are excluded from time-averaged RMSE
TRANSIENT_STEPS = 10


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte-Carlo experiment cell (benchmark x filter x mode x scale)."""

    benchmark: str = "lorenz96"
    variant: Variant = Variant.ETKF
    mode: Mode = Mode.CONVENTIONAL
    runs: int = 100
    base_seed: int = 1234
    noise_scale: float = 1.0
    noise_scales: tuple = DEFAULT_SWEEP_SCALES  # used by run_sweep only
    steps: int | None = None
    ensemble_size: int | None = None
    rho: float = 1.05
    beta0: float = 2.0
    nis_smoothing: float = 0.9
    adaptation_gain: float = 0.1
    jobs: int = 1

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; expected one of {BENCHMARKS}")
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.noise_scale <= 0.0:
            raise ConfigError("noise_scale must be positive")
        if not self.noise_scales:
            raise ConfigError("sweep scale list must be nonempty")
        if any(s <= 0.0 for s in self.noise_scales):
            raise ConfigError("noise scales must be positive")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps must be at least 1")
        if self.ensemble_size is not None and self.ensemble_size < 2:
            raise ConfigError("ensemble_size must be at least 2")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")


def build_model(benchmark: str, noise_scale: float = 1.0):
    if benchmark == "slam":
        model = SlamModel()
    elif benchmark == "lorenz96":
        model = Lorenz96Model()
    else:
        raise ConfigError(f"unknown benchmark {benchmark!r}")
    return model.with_noise_scale(noise_scale) if noise_scale != 1.0 else model


def make_filter_config(cfg: ExperimentConfig) -> FilterConfig:
    rho = 1.0 if cfg.mode is Mode.ADAPTIVE else cfg.rho
    return FilterConfig(
        variant=cfg.variant,
        mode=cfg.mode,
        rho=rho,
        beta0=cfg.beta0,
        nis_smoothing=cfg.nis_smoothing,
        adaptation_gain=cfg.adaptation_gain,
    )


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one seeded run.

    sq_err_sum[i] is the squared metric error summed over the metric
    coordinates at step i+1; reports holds the per-step diagnostics.  Both
    have length == steps for completed runs; a diverged run stops early
    (NaN-filled errors, truncated reports) and is never averaged.
    """

    run_index: int
    seed: int
    sq_err_sum: np.ndarray
    reports: tuple
    diverged: bool
    diverged_at: int | None


@dataclass(frozen=True)
class AggregateResult:
    """Monte-Carlo aggregate across the completed runs of one experiment.

    Per-step arrays have length == steps; index i corresponds to step i+1.
    """

    config: ExperimentConfig
    steps: int
    ensemble_size: int
    metric_dim: int
    rmse: np.ndarray             # per-step RMSE across completed runs
    beta: np.ndarray             # mean compensation weight per step
    acceptance_rate: np.ndarray  # fraction of runs accepting the update per step
    time_avg_rmse: float         # mean of rmse over steps TRANSIENT_STEPS+1..end
    completed_runs: int
    diverged_runs: tuple         # run indices, never averaged in


def run_single(model, filter_config: FilterConfig, steps: int, ensemble_size: int,
               base_seed: int, run_index: int) -> RunRecord:
    """Simulate truth and filter it once; divergence is recorded, not raised."""
    seed = run_seed(base_seed, run_index)
    truth = make_truth(model, seed, steps)
    init_sampler = GaussianSampler(seed, STREAM_ENSEMBLE_INIT)
    ensemble = make_initial_ensemble(model, truth.states[0], ensemble_size, init_sampler)
    filt = EnsembleFilter(model, filter_config, GaussianSampler(seed, STREAM_FILTER))

    metric = model.metric_indices()
    sq_err_sum = np.full(steps, np.nan)
    reports = []
    diverged = False
    diverged_at = None
    for k in range(1, steps + 1):
        obs = truth.observations[k]
        u = model.step_input(k - 1)
        try:
            if obs is None:
                ensemble, report = filt.step(ensemble, u)
            else:
                ensemble, report = filt.step(ensemble, u, obs.z, obs.active)
        except NonFiniteState:
            diverged = True
            diverged_at = k
            break
        err = ensemble.members.mean(axis=1)[metric] - truth.states[k][metric]
        sq_err_sum[k - 1] = float(err @ err)
        reports.append(report)
    return RunRecord(run_index, seed, sq_err_sum, tuple(reports), diverged, diverged_at)


def _aggregate(cfg: ExperimentConfig, records, steps: int, ensemble_size: int,
               metric_dim: int) -> AggregateResult:
    completed = [r for r in records if not r.diverged]
    diverged = tuple(r.run_index for r in records if r.diverged)
    if completed:
        sq = np.stack([r.sq_err_sum for r in completed])
        rmse = np.sqrt(sq.mean(axis=0) / metric_dim)
        beta = np.array(
            [np.mean([r.reports[i].beta_after for r in completed]) for i in range(steps)]
        )
        acceptance = np.array(
            [np.mean([r.reports[i].accepted for r in completed]) for i in range(steps)]
        )
        tail = rmse[TRANSIENT_STEPS:]
        time_avg = float(tail.mean()) if tail.size else float("nan")
    else:
        rmse = np.full(steps, np.nan)
        beta = np.full(steps, np.nan)
        acceptance = np.full(steps, np.nan)
        time_avg = float("nan")
    return AggregateResult(
        config=cfg,
        steps=steps,
        ensemble_size=ensemble_size,
        metric_dim=metric_dim,
        rmse=rmse,
        beta=beta,
        acceptance_rate=acceptance,
        time_avg_rmse=time_avg,
        completed_runs=len(completed),
        diverged_runs=diverged,
    )


def run_experiment(cfg: ExperimentConfig, model=None) -> AggregateResult:
    """Run cfg.runs independent seeded runs and aggregate them.

    Results are identical for any cfg.jobs because every run is seeded from
    (base_seed XOR run_index) alone.
    """
    if model is None:
        model = build_model(cfg.benchmark, cfg.noise_scale)
    steps = cfg.steps if cfg.steps is not None else model.default_steps
    size = cfg.ensemble_size if cfg.ensemble_size is not None else model.default_ensemble_size
    fc = make_filter_config(cfg)
    if cfg.jobs == 1:
        records = [
            run_single(model, fc, steps, size, cfg.base_seed, i) for i in range(cfg.runs)
        ]
    else:
        records = Parallel(n_jobs=cfg.jobs)(
            delayed(run_single)(model, fc, steps, size, cfg.base_seed, i)
            for i in range(cfg.runs)
        )
    return _aggregate(cfg, records, steps, size, len(model.metric_indices()))


@dataclass(frozen=True)
class SweepRow:
    """One line of a measurement-noise sweep table."""

    scale: float
    variant: str
    mode: str
    rmse_avg: float
    diverged_runs: int


def run_sweep(cfg: ExperimentConfig) -> list[SweepRow]:
    """Run one experiment per noise scale; returns rows in scale order."""
    scales = list(dict.fromkeys(float(s) for s in cfg.noise_scales))
    if len(scales) != len(cfg.noise_scales):
        warnings.warn("duplicate noise scales dropped from sweep", stacklevel=2)
    rows = []
    for s in scales:
        result = run_experiment(replace(cfg, noise_scale=s))
        rows.append(
            SweepRow(
                scale=s,
                variant=cfg.variant.value,
                mode=cfg.mode.value,
                rmse_avg=result.time_avg_rmse,
                diverged_runs=len(result.diverged_runs),
            )
        )
    return rows
