"""Measurement-space statistics for ensemble updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import Ensemble, stats
from .linalg import spd_solve

__all__ = [
    "EmptyMeasurement",
    "wrap_angle",
    "MeasStats",
    "measure_stats",
    "InnovationCov",
    "innovation_cov",
    "kalman_gain",
]


class EmptyMeasurement(Exception):
    """No active measurement components this step."""


def wrap_angle(a):
    """Wrap angles (or angle differences) into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class MeasStats:
    """Ensemble statistics pushed through a measurement function h."""

    z_ensemble: np.ndarray  # (m, N) raw member images h(x_i)
    z_mean: np.ndarray      # (m,)
    z_anoms: np.ndarray     # (m, N) member images minus z_mean, angles wrapped
    cross_cov: np.ndarray   # (n, m) = A Z^T / (N-1)
    mismatch: np.ndarray    # (m,) = h(mean) - z_mean, angles wrapped

    @property
    def dim(self) -> int:
        return self.z_mean.shape[0]

    @property
    def size(self) -> int:
        return self.z_ensemble.shape[1]


def measure_stats(ensemble: Ensemble, h, wrap_mask=None, state_anoms=None) -> MeasStats:
    """Map an ensemble through h and collect the update statistics.

    h maps an (n, k) member block to an (m, k) block and is evaluated twice:
    once on the members, once on the mean (for the mismatch h(mean) - z_mean).
    wrap_mask marks angular output rows whose differences wrap into (-pi, pi].
    state_anoms, when given, replaces the ensemble's own anomalies in the
    cross covariance -- the recalibrated pipeline passes the forecast
    anomalies, which a recentered ensemble shares by construction.
    """
    st = stats(ensemble)
    z_ens = np.asarray(h(ensemble.members), dtype=float)
    if z_ens.ndim != 2 or z_ens.shape[1] != ensemble.size:
        raise ValueError("h must map (n, N) members to (m, N) outputs")
    if z_ens.shape[0] == 0:
        raise EmptyMeasurement("measurement function returned zero components")
    z_mean = z_ens.mean(axis=1)
    z_anoms = z_ens - z_mean[:, None]
    z_at_mean = np.asarray(h(st.mean[:, None]), dtype=float)[:, 0]
    mismatch = z_at_mean - z_mean
    if wrap_mask is not None:
        z_anoms[wrap_mask] = wrap_angle(z_anoms[wrap_mask])
        mismatch[wrap_mask] = wrap_angle(mismatch[wrap_mask])
    anoms = st.anomalies if state_anoms is None else np.asarray(state_anoms, dtype=float)
    cross = anoms @ z_anoms.T / (ensemble.size - 1)
    return MeasStats(z_ens, z_mean, z_anoms, cross, mismatch)


@dataclass(frozen=True)
class InnovationCov:
    """Innovation covariance with an optional rank-one mismatch term."""

    matrix: np.ndarray     # (m, m) symmetric
    beta: float
    direction: np.ndarray  # (m,) mismatch vector behind the rank-one term


def innovation_cov(meas: MeasStats, noise_cov, beta: float = 0.0) -> InnovationCov:
    """S = Z Z^T/(N-1) + beta d d^T + R, symmetrized."""
    n1 = meas.size - 1
    s = meas.z_anoms @ meas.z_anoms.T / n1 + np.asarray(noise_cov, dtype=float)
    if beta != 0.0:
        s = s + beta * np.outer(meas.mismatch, meas.mismatch)
    s = 0.5 * (s + s.T)
    return InnovationCov(matrix=s, beta=float(beta), direction=meas.mismatch)


def kalman_gain(cross_cov: np.ndarray, innov: InnovationCov) -> np.ndarray:
    """Gain K solving K S = P_xz through an SPD solve (no explicit inverse)."""
    matrix = innov.matrix if isinstance(innov, InnovationCov) else np.asarray(innov)
    return spd_solve(matrix, np.asarray(cross_cov, dtype=float).T).T
