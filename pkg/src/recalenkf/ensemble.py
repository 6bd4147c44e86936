"""Ensemble container and forecast-side operations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import GaussianSampler, sample_gaussian

__all__ = [
    "InvalidRho",
    "NonFiniteState",
    "Ensemble",
    "EnsembleStats",
    "stats",
    "inflate",
    "propagate",
    "recenter",
]


class InvalidRho(Exception):
    """Inflation factors below one would shrink the ensemble; refused."""


class NonFiniteState(Exception):
    """A state or ensemble stopped being finite (filter divergence)."""


@dataclass(frozen=True)
class Ensemble:
    """State ensemble, one member per column of an (n, N) array, N >= 2."""

    members: np.ndarray

    def __post_init__(self):
        members = np.asarray(self.members, dtype=float)
        if members.ndim != 2:
            raise ValueError("members must be a 2-D (state_dim, size) array")
        if members.shape[1] < 2:
            raise ValueError("need at least two ensemble members")
        if not np.all(np.isfinite(members)):
            raise NonFiniteState("ensemble contains non-finite entries")
        object.__setattr__(self, "members", members)

    @property
    def state_dim(self) -> int:
        return self.members.shape[0]

    @property
    def size(self) -> int:
        return self.members.shape[1]


@dataclass(frozen=True)
class EnsembleStats:
    """Mean and anomaly matrix of an ensemble (anomaly rows sum to ~0)."""

    mean: np.ndarray       # (n,)
    anomalies: np.ndarray  # (n, N)

    @property
    def size(self) -> int:
        return self.anomalies.shape[1]

    def cov_trace(self) -> float:
        # tr(A A^T)/(N-1) without materializing the n x n covariance
        a = self.anomalies
        return float(np.sum(a * a)) / (a.shape[1] - 1)


def stats(ensemble: Ensemble) -> EnsembleStats:
    """Sample mean and anomalies of an ensemble."""
    mean = ensemble.members.mean(axis=1)
    return EnsembleStats(mean=mean, anomalies=ensemble.members - mean[:, None])


def inflate(ensemble: Ensemble, rho: float) -> Ensemble:
    """Scale anomalies by sqrt(rho) about the mean; requires rho >= 1."""
    if rho < 1.0:
        raise InvalidRho(f"rho={rho} < 1")
    if rho == 1.0:
        return ensemble
    st = stats(ensemble)
    return Ensemble(st.mean[:, None] + np.sqrt(rho) * st.anomalies)


def propagate(ensemble: Ensemble, model, u, sampler: GaussianSampler) -> Ensemble:
    """Push every member through model.dynamics and add process noise.

    Raises NonFiniteState if the dynamics (or the noise) blow up.
    """
    members = model.dynamics(ensemble.members, u)
    q = getattr(model, "process_cov", None)
    if q is not None:
        members = members + sample_gaussian(sampler, q, ensemble.size)
    if not np.all(np.isfinite(members)):
        raise NonFiniteState("dynamics produced non-finite members")
    return Ensemble(members)


def recenter(ensemble: Ensemble, new_mean: np.ndarray) -> Ensemble:
    """Translate the ensemble so its mean is new_mean; anomalies preserved."""
    shift = np.asarray(new_mean, dtype=float) - ensemble.members.mean(axis=1)
    return Ensemble(ensemble.members + shift[:, None])
