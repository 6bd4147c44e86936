"""Dense symmetric linear algebra and seeded Gaussian sampling kernels."""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "NotPositiveDefinite",
    "NotPSD",
    "GaussianSampler",
    "run_seed",
    "spd_solve",
    "sym_sqrt_psd",
    "sample_gaussian",
    "sample_gaussian_rank1",
]

_MASK64 = (1 << 64) - 1

# diagonal jitter escalation, relative to trace(A)/dim
_JITTER_SCALES = (0.0, 1e-12, 1e-10, 1e-8)

# eigenvalues above -_PSD_TOL * max|eig| are treated as round-off and clamped
_PSD_TOL = 1e-8


class NotPositiveDefinite(Exception):
    """Cholesky failed even after the jitter escalation ladder."""


class NotPSD(Exception):
    """Symmetric matrix has eigenvalues below the clamping tolerance."""


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric positive-definite A via Cholesky.

    Escalates a diagonal jitter of (1e-12, 1e-10, 1e-8) * trace(A)/dim before
    giving up with NotPositiveDefinite.  Never forms an explicit inverse.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dim = a.shape[0]
    if dim == 0:
        return np.zeros_like(b)
    scale = float(np.trace(a)) / dim
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    for jitter in _JITTER_SCALES:
        m = a if jitter == 0.0 else a + (jitter * scale) * np.eye(dim)
        try:
            factor = cho_factor(m, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        x = cho_solve(factor, b, check_finite=False)
        if np.all(np.isfinite(x)):
            return x
    raise NotPositiveDefinite(
        f"Cholesky failed for {dim}x{dim} matrix at jitter {_JITTER_SCALES[-1]:g}"
    )


def sym_sqrt_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Small negative eigenvalues (>= -1e-8 * max|eig|) are clamped to zero;
    anything more negative raises NotPSD.
    """
    a = np.asarray(a, dtype=float)
    w, v = np.linalg.eigh(a)
    if w.size:
        bound = float(np.max(np.abs(w)))
        if w[0] < -_PSD_TOL * bound:
            raise NotPSD(f"eigenvalue {w[0]:.3e} below -{_PSD_TOL:g} * {bound:.3e}")
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def run_seed(base_seed: int, run_index: int) -> int:
    """Seed for one Monte-Carlo run: base_seed XOR run_index (64-bit)."""
    return (int(base_seed) ^ int(run_index)) & _MASK64


class GaussianSampler:
    """Reproducible Gaussian stream keyed on (seed, stream).

    Uses a counter-based generator keyed on the pair, so distinct streams from
    the same seed are independent without any coordination: one run can split
    truth noise, observation noise and filter noise into separate streams and
    draws in one stream never shift another.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._rng = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"GaussianSampler(seed={self.seed}, stream={self.stream})"

    def standard_normal(self, shape) -> np.ndarray:
        return self._rng.standard_normal(shape)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._rng.uniform(low, high, size)


def _diag_sqrt(diag: np.ndarray) -> np.ndarray:
    # same clamping rule as sym_sqrt_psd, specialized to diagonal matrices
    bound = float(np.max(np.abs(diag))) if diag.size else 0.0
    if diag.size and float(np.min(diag)) < -_PSD_TOL * bound:
        raise NotPSD(f"negative variance {float(np.min(diag)):.3e} on diagonal")
    return np.sqrt(np.clip(diag, 0.0, None))


def sample_gaussian(sampler: GaussianSampler, cov: np.ndarray, count: int) -> np.ndarray:
    """Draw `count` samples of N(0, cov), one per column of an (m, count) array.

    Diagonal covariances are scaled directly; general ones go through the
    symmetric PSD square root (NotPSD propagates).
    """
    cov = np.asarray(cov, dtype=float)
    dim = cov.shape[0]
    normals = sampler.standard_normal((dim, count))
    diag = np.diagonal(cov)
    if np.count_nonzero(cov - np.diag(diag)) == 0:
        return _diag_sqrt(diag)[:, None] * normals
    return sym_sqrt_psd(cov) @ normals


def sample_gaussian_rank1(
    sampler: GaussianSampler,
    base_cov: np.ndarray,
    beta: float,
    direction: np.ndarray,
    count: int,
) -> np.ndarray:
    """Draw N(0, base_cov + beta * d d^T) columns without forming the sum.

    Each sample is eta_base + sqrt(beta) * xi * d with scalar xi ~ N(0, 1)
    independent of eta_base; beta = 0 reduces to base sampling.
    """
    if beta < 0.0:
        raise ValueError(f"beta={beta} must be nonnegative")
    eta = sample_gaussian(sampler, base_cov, count)
    if beta > 0.0:
        xi = sampler.standard_normal(count)
        eta = eta + np.sqrt(beta) * np.outer(np.asarray(direction, dtype=float), xi)
    return eta
