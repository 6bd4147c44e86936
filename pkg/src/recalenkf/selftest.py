"""Built-in oracle checks for the update algebra, runnable from the CLI."""
from __future__ import annotations

import numpy as np

from .ensemble import Ensemble, stats
from .filters import etkf_transform, recal_etkf_transform, recal_stochastic_update
from .linalg import GaussianSampler
from .measurement import innovation_cov, kalman_gain, measure_stats

__all__ = ["run_selftest"]


def _random_instance(rng, n, m, count):
    anoms = rng.standard_normal((n, count))
    anoms -= anoms.mean(axis=1, keepdims=True)
    z_f = rng.standard_normal((m, count))
    z_f -= z_f.mean(axis=1, keepdims=True)
    z_rc = rng.standard_normal((m, count))
    z_rc -= z_rc.mean(axis=1, keepdims=True)
    d_f = rng.standard_normal(m)
    d_rc = rng.standard_normal(m)
    root = rng.standard_normal((m, m))
    noise = root @ root.T + m * np.eye(m)
    return anoms, z_f, z_rc, d_f, d_rc, noise


def _target_cov(anoms, z_f, z_rc, d_f, d_rc, noise, beta):
    n1 = anoms.shape[1] - 1
    p_f = anoms @ anoms.T / n1
    cross_f = anoms @ z_f.T / n1
    s_f = z_f @ z_f.T / n1 + beta * np.outer(d_f, d_f) + noise
    gain = np.linalg.solve(s_f, cross_f.T).T
    cross_rc = anoms @ z_rc.T / n1
    s_rc = z_rc @ z_rc.T / n1 + beta * np.outer(d_rc, d_rc) + noise
    target = p_f + gain @ s_rc @ gain.T - gain @ cross_rc.T - cross_rc @ gain.T
    return gain, cross_rc, s_rc, target


def _check_transform_identity(trials=20, seed=2024):
    """Realized covariance of the square-root transform equals its target."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        n, m, count = 8, 3, 12
        anoms, z_f, z_rc, d_f, d_rc, noise = _random_instance(rng, n, m, count)
        for beta in (0.0, 2.0):
            _, _, _, target = _target_cov(anoms, z_f, z_rc, d_f, d_rc, noise, beta)
            transform = recal_etkf_transform(z_f, z_rc, noise, beta, d_f, d_rc)
            realized = anoms @ transform @ transform.T @ anoms.T / (count - 1)
            rel = np.linalg.norm(realized - target) / np.linalg.norm(target)
            worst = max(worst, rel)
    return worst < 1e-8, f"worst relative deviation {worst:.2e} (tol 1e-8)"


def _check_stochastic_moments(redraws=2000, seed=77):
    """Translated stochastic update: mean exact, covariance right on average."""
    rng = np.random.default_rng(seed)
    n, m, count = 5, 3, 10
    anoms, z_f, z_rc, d_f, d_rc, noise = _random_instance(rng, n, m, count)
    beta = 2.0
    gain, _, _, target = _target_cov(anoms, z_f, z_rc, d_f, d_rc, noise, beta)
    mean_a = rng.standard_normal(n)
    members_rc = mean_a[:, None] + anoms
    z_members_rc = (z_rc + z_rc.mean(axis=1, keepdims=True)) + rng.standard_normal((m, 1))
    z = rng.standard_normal(m)
    sampler = GaussianSampler(seed, 9)
    z_anoms_rc = z_members_rc - z_members_rc.mean(axis=1, keepdims=True)
    # re-derive the target with the actual rc anomalies used below
    s_rc = z_anoms_rc @ z_anoms_rc.T / (count - 1) + beta * np.outer(d_rc, d_rc) + noise
    cross_rc = anoms @ z_anoms_rc.T / (count - 1)
    p_f = anoms @ anoms.T / (count - 1)
    target = p_f + gain @ s_rc @ gain.T - gain @ cross_rc.T - cross_rc @ gain.T

    mean_err = 0.0
    cov_sum = np.zeros((n, n))
    for _ in range(redraws):
        updated = recal_stochastic_update(
            members_rc, gain, z, z_members_rc, noise, beta, d_rc, mean_a, sampler
        )
        mean_err = max(mean_err, float(np.max(np.abs(updated.mean(axis=1) - mean_a))))
        dev = updated - mean_a[:, None]
        cov_sum += dev @ dev.T / (count - 1)
    cov_err = np.max(np.abs(cov_sum / redraws - target))
    scale = np.max(np.abs(target))
    ok = mean_err < 1e-12 and cov_err < 0.15 * scale
    return ok, (
        f"mean error {mean_err:.2e} (tol 1e-12), "
        f"covariance deviation {cov_err / scale:.3f} relative over {redraws} redraws"
    )


def _check_linear_reduction(seed=5):
    """With shared z statistics and beta = 0 the transform is the textbook one."""
    rng = np.random.default_rng(seed)
    n, m, count = 8, 3, 12
    anoms, z_f, _, _, _, noise = _random_instance(rng, n, m, count)
    zeros = np.zeros(m)
    conventional = etkf_transform(z_f, noise)
    recal = recal_etkf_transform(z_f, z_f, noise, 0.0, zeros, zeros)
    diff = np.linalg.norm(recal - conventional)
    return diff < 1e-10, f"transform difference {diff:.2e} (tol 1e-10)"


def _check_quadratic_mismatch(trials=20, seed=11):
    """Quadratic h: mismatch equals -(N-1)/(2N) tr(H_i P) exactly."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n, m, count = 6, 4, 15
        members = rng.standard_normal((n, count)) + rng.standard_normal((n, 1))
        hessians = []
        lin = rng.standard_normal((m, n))
        const = rng.standard_normal(m)
        for _ in range(m):
            a = rng.standard_normal((n, n))
            hessians.append(a + a.T)

        def h(x):
            quad = np.stack([0.5 * np.einsum("ik,ij,jk->k", x, hs, x) for hs in hessians])
            return quad + lin @ x + const[:, None]

        ensemble = Ensemble(members)
        st = stats(ensemble)
        cov = st.anomalies @ st.anomalies.T / (count - 1)
        expected = np.array(
            [-(count - 1) / (2.0 * count) * np.trace(hs @ cov) for hs in hessians]
        )
        got = measure_stats(ensemble, h).mismatch
        worst = max(worst, float(np.max(np.abs(got - expected) / np.abs(expected))))
    return worst < 1e-10, f"worst relative deviation {worst:.2e} (tol 1e-10)"


_CHECKS = (
    ("transform covariance identity", _check_transform_identity),
    ("stochastic update moments", _check_stochastic_moments),
    ("linear reduction", _check_linear_reduction),
    ("quadratic mismatch identity", _check_quadratic_mismatch),
)


def run_selftest(out=print) -> bool:
    """Run every built-in oracle check; returns True when all pass."""
    all_ok = True
    for name, check in _CHECKS:
        ok, detail = check()
        all_ok = all_ok and ok
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all_ok
