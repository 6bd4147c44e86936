"""Benchmark system models: planar range-bearing SLAM and Lorenz-96."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import ClassVar

import numpy as np

from .ensemble import Ensemble, NonFiniteState
from .linalg import GaussianSampler, sample_gaussian
from .measurement import wrap_angle

__all__ = [
    "STREAM_TRUTH_INIT",
    "STREAM_TRUTH_PROCESS",
    "STREAM_TRUTH_OBS",
    "STREAM_ENSEMBLE_INIT",
    "STREAM_FILTER",
    "SlamModel",
    "Lorenz96Model",
    "lorenz96_rhs",
    "rk4_step",
    "Observation",
    "TruthTrajectory",
    "make_truth",
    "make_initial_ensemble",
]

# Seed-stream allocation for one Monte-Carlo run.  Every purpose draws from
# its own counter-based stream, so the draw order in one place can never
# shift the values seen by another.
STREAM_TRUTH_INIT = 0
STREAM_TRUTH_PROCESS = 1
STREAM_TRUTH_OBS = 2
STREAM_ENSEMBLE_INIT = 3
STREAM_FILTER = 4


@dataclass
class SlamModel:
    """Unicycle robot among static point landmarks with range-bearing sensing.

    State layout: [px, py, theta, l1x, l1y, ..., lMx, lMy].  The heading is
    stored unwrapped; only measurement-space differences are wrapped.  A
    landmark is visible when its *true* range is at most sensor_range, and
    correspondence is known, so the active set is an array of landmark
    indices decided from the truth.
    """

    landmark_count: int = 150
    sensor_range: float = 30.0
    world_half_width: float = 90.0
    dt: float = 1.0
    speed: float = 8.0
    steps_per_loop: int = 50
    range_std: float = 0.1
    bearing_std: float = 0.01
    pose_noise_std: tuple = (0.1, 0.1, 0.01)
    pose_prior_std: tuple = (2.0, 2.0, math.radians(15.0))
    landmark_prior_std: float = 8.0

    default_steps: ClassVar[int] = 50
    default_ensemble_size: ClassVar[int] = 100

    def __post_init__(self):
        variances = np.zeros(self.state_dim)
        variances[:3] = np.square(self.pose_noise_std)
        self.process_cov = np.diag(variances)

    @property
    def state_dim(self) -> int:
        return 3 + 2 * self.landmark_count

    @property
    def turn_rate(self) -> float:
        return 2.0 * math.pi / self.steps_per_loop

    def with_noise_scale(self, s: float) -> "SlamModel":
        """Scale the measurement-noise standard deviations by s."""
        return replace(self, range_std=self.range_std * s, bearing_std=self.bearing_std * s)

    def step_input(self, k: int):
        # constant open-loop circuit: (speed, turn rate) every step
        return (self.speed, self.turn_rate)

    def dynamics(self, x, u):
        v, alpha = u
        out = np.array(x, dtype=float)
        heading = x[2] + alpha
        out[0] = x[0] + self.dt * v * np.cos(heading)
        out[1] = x[1] + self.dt * v * np.sin(heading)
        out[2] = heading
        return out

    def measure(self, x, active):
        """Ranges and bearings to the active landmarks, rows in landmark order.

        Output rows interleave [range_j; bearing_j] for each active index j
        (ascending); bearings are wrapped into (-pi, pi].
        """
        idx = np.asarray(active, dtype=int)
        px, py, theta = x[0], x[1], x[2]
        dx = x[3 + 2 * idx] - px[None, :]
        dy = x[4 + 2 * idx] - py[None, :]
        out = np.empty((2 * idx.size, x.shape[1]))
        out[0::2] = np.hypot(dx, dy)
        out[1::2] = wrap_angle(np.arctan2(dy, dx) - theta[None, :])
        return out

    def active_set(self, x_truth):
        dx = x_truth[3::2] - x_truth[0]
        dy = x_truth[4::2] - x_truth[1]
        return np.flatnonzero(np.hypot(dx, dy) <= self.sensor_range)

    def measurement_dim(self, active) -> int:
        return 0 if active is None else 2 * len(active)

    def noise_cov(self, active):
        variances = np.empty(2 * len(active))
        variances[0::2] = self.range_std ** 2
        variances[1::2] = self.bearing_std ** 2
        return np.diag(variances)

    def wrap_mask(self, active):
        mask = np.zeros(2 * len(active), dtype=bool)
        mask[1::2] = True
        return mask

    def initial_truth(self, sampler: GaussianSampler):
        # pose starts at the origin facing +x; landmarks uniform in the box
        x = np.zeros(self.state_dim)
        x[3:] = sampler.uniform(
            -self.world_half_width, self.world_half_width, 2 * self.landmark_count
        )
        return x

    def initial_cov(self):
        variances = np.full(self.state_dim, self.landmark_prior_std ** 2)
        variances[:3] = np.square(self.pose_prior_std)
        return np.diag(variances)

    def metric_indices(self):
        # robot position plus all landmark coordinates; heading excluded
        return np.r_[0:2, 3:self.state_dim]


def lorenz96_rhs(x, forcing: float = 8.0):
    """Cyclic advection-dissipation-forcing tendency; works on (n,) or (n, k)."""
    xp1 = np.roll(x, -1, axis=0)
    xm2 = np.roll(x, 2, axis=0)
    xm1 = np.roll(x, 1, axis=0)
    return (xp1 - xm2) * xm1 - x + forcing


def rk4_step(x, dt: float, rhs):
    """One classical fourth-order Runge-Kutta step of x' = rhs(x)."""
    k1 = rhs(x)
    k2 = rhs(x + 0.5 * dt * k1)
    k3 = rhs(x + 0.5 * dt * k2)
    k4 = rhs(x + dt * k3)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("integration blew up")
    return out


@dataclass
class Lorenz96Model:
    """Forty-variable cyclic flow observed through the squares of odd coordinates.

    One integrator step per filter cycle; the model is perfect (no process
    noise).  The measurement takes every second coordinate starting from the
    first and squares it, m = dim/2.
    """

    dim: int = 40
    forcing: float = 8.0
    dt: float = 0.05
    obs_std: float = 0.01
    spin_up_steps: int = 1000

    default_steps: ClassVar[int] = 120
    default_ensemble_size: ClassVar[int] = 50

    def __post_init__(self):
        self.process_cov = None
        self._obs_rows = np.arange(0, self.dim, 2)

    @property
    def state_dim(self) -> int:
        return self.dim

    def with_noise_scale(self, s: float) -> "Lorenz96Model":
        return replace(self, obs_std=self.obs_std * s)

    def step_input(self, k: int):
        return None

    def _rhs(self, x):
        return lorenz96_rhs(x, self.forcing)

    def dynamics(self, x, u):
        return rk4_step(x, self.dt, self._rhs)

    def measure(self, x, active):
        return x[self._obs_rows] ** 2

    def active_set(self, x_truth):
        return None  # fixed full measurement every step

    def measurement_dim(self, active) -> int:
        return self._obs_rows.size

    def noise_cov(self, active):
        return self.obs_std ** 2 * np.eye(self._obs_rows.size)

    def wrap_mask(self, active):
        return None

    def initial_truth(self, sampler: GaussianSampler):
        # perturbed rest state, integrated onto the attractor
        x = self.forcing * np.ones(self.dim) + sampler.standard_normal(self.dim)
        for _ in range(self.spin_up_steps):
            x = rk4_step(x, self.dt, self._rhs)
        return x

    def initial_cov(self):
        return np.eye(self.dim)

    def metric_indices(self):
        return np.arange(self.dim)


@dataclass(frozen=True)
class Observation:
    """One step's noisy measurement and the active set it was taken over."""

    z: np.ndarray
    active: object


@dataclass(frozen=True)
class TruthTrajectory:
    """Reference states plus the observations the filter will see.

    states has shape (steps+1, n); observations has length steps+1 with
    observations[0] = None and None wherever a step had no measurement.
    """

    states: np.ndarray
    observations: tuple


def make_truth(model, seed: int, steps: int) -> TruthTrajectory:
    """Simulate one truth trajectory and its noisy observations."""
    init = GaussianSampler(seed, STREAM_TRUTH_INIT)
    process = GaussianSampler(seed, STREAM_TRUTH_PROCESS)
    obs_noise = GaussianSampler(seed, STREAM_TRUTH_OBS)
    x = model.initial_truth(init)
    states = np.empty((steps + 1, x.size))
    states[0] = x
    observations = [None]
    q = getattr(model, "process_cov", None)
    for k in range(1, steps + 1):
        x = model.dynamics(x[:, None], model.step_input(k - 1))[:, 0]
        if q is not None:
            x = x + sample_gaussian(process, q, 1)[:, 0]
        if not np.all(np.isfinite(x)):
            raise NonFiniteState("truth trajectory diverged")
        states[k] = x
        active = model.active_set(x)
        if model.measurement_dim(active) == 0:
            observations.append(None)
            continue
        z = model.measure(x[:, None], active)[:, 0]
        z = z + sample_gaussian(obs_noise, model.noise_cov(active), 1)[:, 0]
        mask = model.wrap_mask(active)
        if mask is not None:
            z[mask] = wrap_angle(z[mask])
        observations.append(Observation(z=z, active=active))
    return TruthTrajectory(states=states, observations=tuple(observations))


def make_initial_ensemble(model, truth0, size: int, sampler: GaussianSampler) -> Ensemble:
    """Members drawn about the true initial state with the model's prior."""
    draws = sample_gaussian(sampler, model.initial_cov(), size)
    return Ensemble(np.asarray(truth0, dtype=float)[:, None] + draws)
