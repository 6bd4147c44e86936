"""Ensemble Kalman filter variants and their recalibration/compensation modes.

Two update variants (perturbed-observation stochastic, deterministic
square-root transform) crossed with three modes:

* conventional -- textbook update with multiplicative inflation;
* recalibrated -- the measurement statistics are re-evaluated at the updated
  mean, the posterior spread is matched to the recalibrated target, and the
  whole update backs out when it would raise total variance;
* adaptive -- recalibrated update plus a rank-one innovation-covariance
  compensation whose weight beta is tuned online from the innovation
  consistency statistic (inflation is dropped entirely, rho = 1).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .ensemble import Ensemble, InvalidRho, inflate, propagate, recenter, stats
from .linalg import GaussianSampler, sample_gaussian, sample_gaussian_rank1, spd_solve, sym_sqrt_psd
from .measurement import (
    InnovationCov,
    MeasStats,
    innovation_cov,
    kalman_gain,
    measure_stats,
    wrap_angle,
)

__all__ = [
    "Variant",
    "Mode",
    "FilterConfig",
    "CompensationState",
    "StepReport",
    "innovation",
    "mean_update",
    "conventional_stochastic_update",
    "etkf_transform",
    "recal_stochastic_update",
    "recal_etkf_transform",
    "posterior_target_trace",
    "backout_decide",
    "beta_update",
    "filter_step",
    "EnsembleFilter",
]


class Variant(str, Enum):
    STOCHASTIC = "stochastic"
    ETKF = "etkf"


class Mode(str, Enum):
    CONVENTIONAL = "conventional"
    RECALIBRATED = "recalibrated"
    ADAPTIVE = "adaptive"


@dataclass(frozen=True)
class FilterConfig:
    """Variant/mode selection plus inflation and compensation tuning."""

    variant: Variant = Variant.ETKF
    mode: Mode = Mode.CONVENTIONAL
    rho: float = 1.0              # multiplicative inflation on the forecast
    beta0: float = 2.0            # initial compensation weight (adaptive mode)
    nis_smoothing: float = 0.9    # EWMA factor on the innovation-consistency excess
    adaptation_gain: float = 0.1  # step size nudging beta per step

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.rho < 1.0:
            raise InvalidRho(f"rho={self.rho} < 1")
        if self.mode is Mode.ADAPTIVE and self.rho != 1.0:
            raise InvalidRho("adaptive mode replaces inflation; rho must be 1")
        if not 0.0 < self.nis_smoothing < 1.0:
            raise ValueError("nis_smoothing must lie in (0, 1)")
        if self.adaptation_gain <= 0.0:
            raise ValueError("adaptation_gain must be positive")
        if self.beta0 < 0.0:
            raise ValueError("beta0 must be nonnegative")


@dataclass(frozen=True)
class CompensationState:
    """Online state of the innovation-consistency controller."""

    beta: float = 0.0
    smoothed_excess: float = 0.0  # EWMA of (NIS - m_k); signed
    initialized: bool = False

    @classmethod
    def for_config(cls, config: FilterConfig) -> "CompensationState":
        beta = config.beta0 if config.mode is Mode.ADAPTIVE else 0.0
        return cls(beta=beta, smoothed_excess=0.0, initialized=False)


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics emitted by filter_step."""

    accepted: bool
    recalibrated: bool
    measurement_dim: int
    trace_forecast: float
    trace_posterior_target: float
    nis: float
    beta_after: float


def innovation(z, z_mean, wrap_mask=None) -> np.ndarray:
    """Innovation z - z_mean with angular components wrapped into (-pi, pi]."""
    diff = np.asarray(z, dtype=float) - z_mean
    if wrap_mask is not None:
        diff[wrap_mask] = wrap_angle(diff[wrap_mask])
    return diff


def mean_update(mean_f, gain, innov) -> np.ndarray:
    """Updated mean x_f + K e."""
    return mean_f + gain @ innov


def conventional_stochastic_update(
    members, gain, z, z_members, noise_cov, sampler: GaussianSampler, wrap_mask=None
) -> np.ndarray:
    """Perturbed-observation update x_i + K (z + eta_i - h(x_i)), eta ~ N(0, R).

    No recentering: the realized mean keeps the perturbation average.
    """
    count = members.shape[1]
    eta = sample_gaussian(sampler, noise_cov, count)
    resid = np.asarray(z, dtype=float)[:, None] + eta - z_members
    if wrap_mask is not None:
        resid[wrap_mask] = wrap_angle(resid[wrap_mask])
    return members + gain @ resid


def etkf_transform(z_anoms, noise_cov) -> np.ndarray:
    """Symmetric square-root transform T with A_a = A_f T.

    T^2 = I - Z^T (Z Z^T + (N-1) R)^{-1} Z; the symmetric square root keeps
    the zero-column-sum structure of the anomalies.
    """
    count = z_anoms.shape[1]
    denom = z_anoms @ z_anoms.T + (count - 1) * np.asarray(noise_cov, dtype=float)
    t_sq = np.eye(count) - z_anoms.T @ spd_solve(denom, z_anoms)
    return sym_sqrt_psd(0.5 * (t_sq + t_sq.T))


def recal_etkf_transform(
    z_anoms_f, z_anoms_rc, noise_cov, beta, mismatch_f, mismatch_rc
) -> np.ndarray:
    """Square-root transform whose realized covariance hits the recalibrated target.

    With B = (Z_f Z_f^T + (N-1)(R + beta d_f d_f^T))^{-1} and
    Gamma = Z_rc Z_rc^T + (N-1)(R + beta d_rc d_rc^T):

        T^2 = I - Z_f^T B Z_rc - Z_rc^T B Z_f + Z_f^T B Gamma B Z_f

    which is PSD by construction; A_f T then realizes exactly the target
    P_f - P_xz K^T - K P_xz^T + K S K^T built from the recalibrated statistics.
    Setting z_anoms_rc = z_anoms_f and beta = 0 recovers the conventional
    transform.
    """
    count = z_anoms_f.shape[1]
    n1 = count - 1
    noise_cov = np.asarray(noise_cov, dtype=float)
    r_f = noise_cov
    if beta != 0.0:
        r_f = r_f + beta * np.outer(mismatch_f, mismatch_f)
    denom = z_anoms_f @ z_anoms_f.T + n1 * r_f
    w_f = spd_solve(denom, z_anoms_f)    # B Z_f
    w_rc = spd_solve(denom, z_anoms_rc)  # B Z_rc
    cross = z_anoms_f.T @ w_rc           # Z_f^T B Z_rc
    r_rc = noise_cov
    if beta != 0.0:
        r_rc = r_rc + beta * np.outer(mismatch_rc, mismatch_rc)
    gamma = z_anoms_rc @ z_anoms_rc.T + n1 * r_rc
    t_sq = np.eye(count) - cross - cross.T + w_f.T @ gamma @ w_f
    return sym_sqrt_psd(0.5 * (t_sq + t_sq.T))


def recal_stochastic_update(
    members_rc,
    gain,
    z,
    z_members_rc,
    noise_cov,
    beta,
    mismatch_rc,
    mean_a,
    sampler: GaussianSampler,
    wrap_mask=None,
) -> np.ndarray:
    """Perturbed-observation update about the recalibrated ensemble.

    Perturbations are drawn from N(0, R + beta d_rc d_rc^T); afterwards the
    whole ensemble is translated so its mean is exactly mean_a, which leaves
    the expected sample covariance at the recalibrated target.
    """
    count = members_rc.shape[1]
    eta = sample_gaussian_rank1(sampler, noise_cov, beta, mismatch_rc, count)
    resid = np.asarray(z, dtype=float)[:, None] + eta - z_members_rc
    if wrap_mask is not None:
        resid[wrap_mask] = wrap_angle(resid[wrap_mask])
    updated = members_rc + gain @ resid
    shift = np.asarray(mean_a, dtype=float) - updated.mean(axis=1)
    return updated + shift[:, None]


def posterior_target_trace(
    trace_forecast: float, gain, cross_cov_rc, innov_rc: InnovationCov
) -> float:
    """tr of the recalibrated posterior target, via cyclic trace identities.

    tr(P_f + K S K^T - K P_xz^T - P_xz K^T) without any n x n product:
    tr(K S K^T) = sum((K S) * K) and tr(K P_xz^T) = sum(K * P_xz).
    """
    ks = gain @ innov_rc.matrix
    t_gain = float(np.sum(ks * gain))
    t_cross = float(np.sum(gain * cross_cov_rc))
    return trace_forecast + t_gain - 2.0 * t_cross


def backout_decide(trace_target: float, trace_forecast: float) -> bool:
    """Accept the update iff it does not raise total variance (inclusive)."""
    return bool(trace_target <= trace_forecast)


def beta_update(
    comp: CompensationState, nis_value: float, m_k: int, config: FilterConfig
) -> CompensationState:
    """One controller step: EWMA the NIS excess, nudge beta, clamp at zero.

    The excess (NIS - m_k) is smoothed rather than the NIS itself so that
    steps with different measurement dimensions share one controller; the
    first measurement step seeds the EWMA with its own excess.
    """
    excess = nis_value - float(m_k)
    if comp.initialized:
        lam = config.nis_smoothing
        smoothed = lam * comp.smoothed_excess + (1.0 - lam) * excess
    else:
        smoothed = excess
    beta = max(comp.beta + config.adaptation_gain * smoothed, 0.0)
    return CompensationState(beta=beta, smoothed_excess=smoothed, initialized=True)


def filter_step(
    ensemble: Ensemble,
    model,
    u,
    z,
    active,
    config: FilterConfig,
    comp: CompensationState,
    sampler: GaussianSampler,
):
    """One forecast/analysis cycle.

    Returns (analysis ensemble, new compensation state, StepReport).  A step
    without measurements (z is None or the active set is empty) is forecast
    only; it still advances the ensemble through dynamics and inflation but
    leaves the compensation controller untouched.
    """
    forecast = propagate(ensemble, model, u, sampler)
    rho = 1.0 if config.mode is Mode.ADAPTIVE else config.rho
    forecast = inflate(forecast, rho)
    st_f = stats(forecast)
    trace_f = st_f.cov_trace()

    m_k = model.measurement_dim(active) if z is not None else 0
    if m_k == 0:
        report = StepReport(
            accepted=True,
            recalibrated=False,
            measurement_dim=0,
            trace_forecast=trace_f,
            trace_posterior_target=trace_f,
            nis=float("nan"),
            beta_after=comp.beta,
        )
        return forecast, comp, report

    def h(x):
        return model.measure(x, active)

    wrap_mask = model.wrap_mask(active)
    noise = model.noise_cov(active)
    beta = comp.beta if config.mode is Mode.ADAPTIVE else 0.0

    ms_f = measure_stats(forecast, h, wrap_mask)
    s_f = innovation_cov(ms_f, noise, beta)
    gain = kalman_gain(ms_f.cross_cov, s_f)
    innov = innovation(z, ms_f.z_mean, wrap_mask)
    nis_value = float(innov @ spd_solve(s_f.matrix, innov))
    mean_a = mean_update(st_f.mean, gain, innov)

    if config.mode is Mode.CONVENTIONAL:
        if config.variant is Variant.STOCHASTIC:
            members = conventional_stochastic_update(
                forecast.members, gain, z, ms_f.z_ensemble, noise, sampler, wrap_mask
            )
            analysis = Ensemble(members)
        else:
            transform = etkf_transform(ms_f.z_anoms, noise)
            analysis = Ensemble(mean_a[:, None] + st_f.anomalies @ transform)
        ks = gain @ s_f.matrix
        trace_target = trace_f - float(np.sum(ks * gain))
        accepted = True
        recalibrated = False
    else:
        recal = recenter(forecast, mean_a)
        ms_rc = measure_stats(recal, h, wrap_mask, state_anoms=st_f.anomalies)
        s_rc = innovation_cov(ms_rc, noise, beta)
        trace_target = posterior_target_trace(trace_f, gain, ms_rc.cross_cov, s_rc)
        accepted = backout_decide(trace_target, trace_f)
        recalibrated = True
        if not accepted:
            analysis = forecast
        elif config.variant is Variant.STOCHASTIC:
            members = recal_stochastic_update(
                recal.members,
                gain,
                z,
                ms_rc.z_ensemble,
                noise,
                beta,
                ms_rc.mismatch,
                mean_a,
                sampler,
                wrap_mask,
            )
            analysis = Ensemble(members)
        else:
            transform = recal_etkf_transform(
                ms_f.z_anoms, ms_rc.z_anoms, noise, beta, ms_f.mismatch, ms_rc.mismatch
            )
            analysis = Ensemble(mean_a[:, None] + st_f.anomalies @ transform)

    comp_next = comp
    if config.mode is Mode.ADAPTIVE:
        # the controller advances even on backed-out steps: the innovation
        # evidence is real whether or not the update was applied
        comp_next = beta_update(comp, nis_value, m_k, config)

    report = StepReport(
        accepted=accepted,
        recalibrated=recalibrated,
        measurement_dim=m_k,
        trace_forecast=trace_f,
        trace_posterior_target=trace_target,
        nis=nis_value,
        beta_after=comp_next.beta,
    )
    return analysis, comp_next, report


class EnsembleFilter:
    """Stateful wrapper driving filter_step over a run."""

    def __init__(self, model, config: FilterConfig, sampler: GaussianSampler):
        self.model = model
        self.config = config
        self.sampler = sampler
        self.compensation = CompensationState.for_config(config)
        self.reports: list[StepReport] = []

    def step(self, ensemble: Ensemble, u=None, z=None, active=None):
        analysis, self.compensation, report = filter_step(
            ensemble, self.model, u, z, active, self.config, self.compensation, self.sampler
        )
        self.reports.append(report)
        return analysis, report
