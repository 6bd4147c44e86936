from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import pytest

from recalenkf.benchmarks import Lorenz96Model, SlamModel
from recalenkf.filters import Mode, StepReport, Variant
from recalenkf.harness import (
    TRANSIENT_STEPS,
    AggregateResult,
    ConfigError,
    ExperimentConfig,
    RunRecord,
    _aggregate,
    build_model,
    make_filter_config,
    run_experiment,
    run_single,
    run_sweep,
)


def _small_lorenz():
    return Lorenz96Model(dim=8, spin_up_steps=20)


def _small_cfg(**kwargs):
    base = dict(
        benchmark="lorenz96", runs=3, base_seed=11, steps=12, ensemble_size=8, rho=1.05
    )
    base.update(kwargs)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------- config


def test_config_rejects_unknown_benchmark():
    with pytest.raises(ConfigError):
        ExperimentConfig(benchmark="rossler")


def test_config_rejects_bad_counts_and_scales():
    with pytest.raises(ConfigError):
        ExperimentConfig(runs=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(noise_scale=0.0)
    with pytest.raises(ConfigError):
        ExperimentConfig(noise_scales=())
    with pytest.raises(ConfigError):
        ExperimentConfig(noise_scales=(1.0, -2.0))
    with pytest.raises(ConfigError):
        ExperimentConfig(steps=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(ensemble_size=1)
    with pytest.raises(ConfigError):
        ExperimentConfig(jobs=0)


def test_config_coerces_enums():
    cfg = ExperimentConfig(variant="stochastic", mode="adaptive", rho=1.05)
    assert cfg.variant is Variant.STOCHASTIC
    assert cfg.mode is Mode.ADAPTIVE
    # rho is an experiment-level setting; make_filter_config drops it for adaptive
    assert make_filter_config(cfg).rho == 1.0


def test_build_model_dispatch():
    assert isinstance(build_model("slam"), SlamModel)
    assert isinstance(build_model("lorenz96"), Lorenz96Model)
    assert build_model("lorenz96", 10.0).obs_std == pytest.approx(0.1)
    assert build_model("slam", 0.5).range_std == pytest.approx(0.05)
    with pytest.raises(ConfigError):
        build_model("nope")


# ---------------------------------------------------------------- run_single


def test_run_single_lengths_and_determinism():
    model = _small_lorenz()
    fc = make_filter_config(_small_cfg())
    a = run_single(model, fc, 12, 8, 11, 0)
    b = run_single(model, fc, 12, 8, 11, 0)
    assert a.sq_err_sum.shape == (12,)
    assert len(a.reports) == 12
    assert not a.diverged
    assert a.diverged_at is None
    assert np.all(np.isfinite(a.sq_err_sum))
    assert np.array_equal(a.sq_err_sum, b.sq_err_sum)
    c = run_single(model, fc, 12, 8, 11, 1)
    assert not np.array_equal(a.sq_err_sum, c.sq_err_sum)  # distinct run seeds


# ---------------------------------------------------------------- aggregation


def _fake_report(accepted=True, beta=0.0):
    return StepReport(
        accepted=accepted,
        recalibrated=False,
        measurement_dim=2,
        trace_forecast=1.0,
        trace_posterior_target=0.5,
        nis=2.0,
        beta_after=beta,
    )


def _fake_record(index, sq, accepted=None, diverged=False, diverged_at=None):
    sq = np.asarray(sq, dtype=float)
    accepted = accepted if accepted is not None else [True] * len(sq)
    reports = tuple(_fake_report(accepted=a, beta=float(i)) for i, a in enumerate(accepted))
    return RunRecord(index, 1000 + index, sq, reports, diverged, diverged_at)


def test_aggregate_rmse_oracle():
    cfg = _small_cfg(runs=2, steps=2)
    records = [
        _fake_record(0, [8.0, 2.0]),
        _fake_record(1, [4.0, 0.0]),
    ]
    out = _aggregate(cfg, records, steps=2, ensemble_size=8, metric_dim=3)
    # rmse = sqrt(mean_over_runs(sum) / metric_dim)
    assert out.rmse[0] == pytest.approx(math.sqrt(6.0 / 3.0))
    assert out.rmse[1] == pytest.approx(math.sqrt(1.0 / 3.0))
    assert out.completed_runs == 2
    assert out.diverged_runs == ()
    assert math.isnan(out.time_avg_rmse)  # no steps past the transient window


def test_aggregate_time_window():
    cfg = _small_cfg(runs=1, steps=12)
    sq = np.zeros(12)
    sq[10] = 4.0  # step 11
    sq[11] = 16.0  # step 12
    out = _aggregate(cfg, [_fake_record(0, sq)], steps=12, ensemble_size=8, metric_dim=1)
    assert out.time_avg_rmse == pytest.approx((2.0 + 4.0) / 2.0)
    assert out.rmse.shape == (12,)


def test_aggregate_excludes_diverged():
    cfg = _small_cfg(runs=3, steps=2)
    records = [
        _fake_record(0, [1.0, 1.0]),
        _fake_record(1, [np.nan, np.nan], diverged=True, diverged_at=1),
        _fake_record(2, [9.0, 9.0]),
    ]
    out = _aggregate(cfg, records, steps=2, ensemble_size=8, metric_dim=1)
    assert out.completed_runs == 2
    assert out.diverged_runs == (1,)
    assert out.rmse[0] == pytest.approx(math.sqrt(5.0))


def test_aggregate_all_diverged():
    cfg = _small_cfg(runs=1, steps=2)
    records = [_fake_record(0, [np.nan, np.nan], diverged=True, diverged_at=2)]
    out = _aggregate(cfg, records, steps=2, ensemble_size=8, metric_dim=1)
    assert out.completed_runs == 0
    assert out.diverged_runs == (0,)
    assert np.all(np.isnan(out.rmse))
    assert math.isnan(out.time_avg_rmse)


def test_aggregate_acceptance_and_beta_curves():
    cfg = _small_cfg(runs=2, steps=3)
    records = [
        _fake_record(0, [1.0, 1.0, 1.0], accepted=[True, False, True]),
        _fake_record(1, [1.0, 1.0, 1.0], accepted=[True, True, True]),
    ]
    out = _aggregate(cfg, records, steps=3, ensemble_size=8, metric_dim=1)
    assert np.allclose(out.acceptance_rate, [1.0, 0.5, 1.0])
    assert np.allclose(out.beta, [0.0, 1.0, 2.0])  # per-step mean of beta_after


# ---------------------------------------------------------------- experiments


def test_run_experiment_deterministic_and_parallel_equal():
    cfg = _small_cfg(jobs=1)
    model = _small_lorenz()
    serial_a = run_experiment(cfg, model=model)
    serial_b = run_experiment(cfg, model=model)
    assert np.array_equal(serial_a.rmse, serial_b.rmse)

    parallel = run_experiment(replace(cfg, jobs=2), model=model)
    assert np.array_equal(serial_a.rmse, parallel.rmse)
    assert serial_a.time_avg_rmse == parallel.time_avg_rmse
    assert serial_a.metric_dim == 8


def test_run_experiment_uses_model_defaults():
    cfg = ExperimentConfig(benchmark="lorenz96", runs=1, base_seed=3, steps=None,
                           ensemble_size=None, rho=1.05)
    res = run_experiment(cfg, model=_small_lorenz())
    assert res.steps == Lorenz96Model.default_steps
    assert res.ensemble_size == Lorenz96Model.default_ensemble_size


@dataclass
class _TippingModel:
    """Columns whose magnitude tops the threshold amplify past overflow.

    The truth starts at zero and stays there, so only ensembles (seeded from
    the unit prior) can diverge, and whether one does depends on its draw.
    """

    dim: int = 2
    threshold: float = 2.0
    process_cov = None

    def step_input(self, k):
        return None

    def dynamics(self, x, u):
        scale = np.where(np.max(np.abs(x), axis=0) > self.threshold, 1e80, 1.0)
        return x * scale

    def measure(self, x, active):
        return x[:1]

    def active_set(self, x):
        return None

    def measurement_dim(self, active):
        return 0  # never observed: pure prediction

    def noise_cov(self, active):
        return np.zeros((0, 0))

    def wrap_mask(self, active):
        return None

    def initial_truth(self, sampler):
        return np.zeros(self.dim)

    def initial_cov(self):
        return np.eye(self.dim)

    def metric_indices(self):
        return np.arange(self.dim)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_run_experiment_counts_diverged_separately():
    cfg = _small_cfg(runs=8, base_seed=77, steps=12, ensemble_size=5, rho=1.0)
    res = run_experiment(cfg, model=_TippingModel())
    assert 0 < len(res.diverged_runs) < 8
    assert res.completed_runs + len(res.diverged_runs) == 8

    # the aggregate must match re-aggregating only the completed runs
    fc = make_filter_config(cfg)
    completed = [
        run_single(_TippingModel(), fc, 12, 5, 77, i)
        for i in range(8)
        if i not in res.diverged_runs
    ]
    redo = _aggregate(cfg, completed, 12, 5, 2)
    assert np.array_equal(res.rmse, redo.rmse)

    record = run_single(_TippingModel(), fc, 12, 5, 77, res.diverged_runs[0])
    assert record.diverged
    assert 1 <= record.diverged_at <= 12
    assert len(record.reports) == record.diverged_at - 1


@dataclass
class _StaticModel:
    """Noiseless fixed-point system with a perfect point prior."""

    dim: int = 2
    process_cov = None

    def step_input(self, k):
        return None

    def dynamics(self, x, u):
        return x

    def measure(self, x, active):
        return np.array(x)

    def active_set(self, x):
        return None

    def measurement_dim(self, active):
        return self.dim

    def noise_cov(self, active):
        return np.zeros((self.dim, self.dim))

    def wrap_mask(self, active):
        return None

    def initial_truth(self, sampler):
        return np.array([1.0, -2.0])

    def initial_cov(self):
        return np.zeros((self.dim, self.dim))

    def metric_indices(self):
        return np.arange(self.dim)


@pytest.mark.parametrize("variant", ["etkf", "stochastic"])
def test_run_experiment_noiseless_degenerate(variant):
    # zero prior + zero noise: the error floor never rises above round-off
    cfg = _small_cfg(runs=2, steps=5, ensemble_size=4, variant=variant)
    res = run_experiment(cfg, model=_StaticModel())
    assert np.all(res.rmse <= 1e-12)
    assert res.diverged_runs == ()


# ---------------------------------------------------------------- sweeps


def test_run_sweep_rows_and_order():
    cfg = _small_cfg(runs=2, steps=12, noise_scales=(0.5, 2.0))
    model_free_rows = run_sweep(cfg)
    assert [r.scale for r in model_free_rows] == [0.5, 2.0]
    for row, scale in zip(model_free_rows, (0.5, 2.0)):
        direct = run_experiment(replace(cfg, noise_scale=scale))
        assert row.rmse_avg == direct.time_avg_rmse
        assert row.variant == "etkf"
        assert row.mode == "conventional"
        assert row.diverged_runs == 0


def test_run_sweep_deduplicates_with_warning():
    cfg = _small_cfg(runs=1, steps=12, noise_scales=(1.0, 1.0, 2.0))
    with pytest.warns(UserWarning, match="duplicate"):
        rows = run_sweep(cfg)
    assert [r.scale for r in rows] == [1.0, 2.0]
