"""Euler-Maruyama simulation and marginal snapshots without sample identity."""

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DimensionError, DivergenceError
from .linalg import psd_sqrt


@dataclass(frozen=True)
class TrajectorySet:
    """``paths[j, i]`` is the state of path ``j`` at ``times[i]``."""

    times: np.ndarray
    paths: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        paths = np.asarray(self.paths, dtype=float)
        if paths.ndim != 3 or paths.shape[1] != times.size:
            raise DimensionError(
                f"paths must be (M, {times.size}, d), got {paths.shape}"
            )
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(paths)):
            raise ValueError("paths contain non-finite states")
        weights = self.weights
        if weights is not None:
            weights = np.asarray(weights, dtype=float).reshape(-1)
            if weights.shape != (paths.shape[0],) or abs(weights.sum() - 1.0) > 1e-10:
                raise ValueError("weights must have one entry per path and sum to 1")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "weights", weights)

    @property
    def n_paths(self):
        return self.paths.shape[0]

    @property
    def n_times(self):
        return self.times.size

    @property
    def d(self):
        return self.paths.shape[2]


@dataclass(frozen=True)
class MarginalDataset:
    """Snapshots ``(t_i, X_i)`` where rows of ``X_i`` carry no identity across times."""

    times: np.ndarray
    samples: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        samples = tuple(np.atleast_2d(np.asarray(s, dtype=float)) for s in self.samples)
        if len(samples) != times.size:
            raise DimensionError("one sample matrix is required per time")
        if times.size == 0:
            raise ValueError("at least one snapshot is required")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        d = samples[0].shape[1]
        for t, s in zip(times, samples):
            if s.shape[1] != d:
                raise DimensionError(f"snapshot at t={t} has dimension {s.shape[1]}, expected {d}")
            if s.shape[0] < 2:
                raise ValueError(f"snapshot at t={t} has fewer than 2 samples")
            if not np.all(np.isfinite(s)):
                raise ValueError(f"snapshot at t={t} contains non-finite values")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.times.size

    @property
    def d(self):
        return self.samples[0].shape[1]

    @property
    def counts(self):
        return [s.shape[0] for s in self.samples]

    def uniform_dt(self, rtol=1e-6):
        """Common spacing of the snapshot times; raises if the grid is irregular."""
        if len(self) < 2:
            raise ValueError("N ≥ 2 required")
        steps = np.diff(self.times)
        dt = float(steps.mean())
        if np.any(np.abs(steps - dt) > rtol * dt):
            raise ValueError("snapshot times must be equally spaced")
        return dt


def _path_stream(seed, j):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(j,)))


def euler_maruyama(params, p0, dt_em, n_steps, M, seed=0):
    """Simulate ``M`` paths of ``dX = A X dt + G dW`` on ``n_steps + 1`` grid times.

    Each path draws its start and noise from its own substream keyed by
    ``(seed, path index)``, so results do not depend on batching. When
    ``params.G`` is absent the symmetric square root of ``H`` is used.
    """
    if not dt_em > 0:
        raise ValueError("dt_em must be positive")
    if n_steps < 1 or M < 1:
        raise ValueError("n_steps and M must be >= 1")
    if p0.d != params.d:
        raise DimensionError(f"p0 has dimension {p0.d}, params {params.d}")
    d = params.d
    G = params.G if params.G is not None else psd_sqrt(params.H)
    m = G.shape[1]

    x0 = np.empty((M, d))
    xi = np.empty((M, n_steps, m))
    for j in range(M):
        rng = _path_stream(seed, j)
        x0[j] = p0.sample(rng, 1)[0]
        xi[j] = rng.standard_normal((n_steps, m))

    paths = np.empty((M, n_steps + 1, d))
    paths[:, 0] = x0
    drift = params.A.T * dt_em
    noise = G.T * np.sqrt(dt_em)
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            x = x + x @ drift + xi[:, k] @ noise
            if not np.all(np.isfinite(x)):
                raise DivergenceError(k + 1)
            paths[:, k + 1] = x
    times = np.arange(n_steps + 1) * dt_em
    return TrajectorySet(times, paths)


def subsample_marginals(traj, dt_obs, n_marginals, shuffle_seed=0, shuffle=True):
    """Keep snapshots at ``0, dt_obs, ..., (n_marginals - 1) dt_obs``.

    Rows are permuted independently within each snapshot so no path identity
    survives across times.
    """
    if n_marginals < 1:
        raise ValueError("n_marginals must be >= 1")
    if traj.n_times < 2:
        raise AlignmentError("trajectories need at least two grid times")
    step = traj.times[1] - traj.times[0]
    ratio = dt_obs / step
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 * max(1.0, ratio):
        raise AlignmentError(f"dt_obs={dt_obs} is not an integer multiple of the step {step}")
    idx = np.arange(n_marginals) * stride
    if idx[-1] >= traj.n_times:
        raise AlignmentError(
            f"requested {n_marginals} snapshots at spacing {dt_obs} exceed the trajectory span"
        )
    rng = np.random.default_rng(shuffle_seed)
    samples = []
    for i in idx:
        block = traj.paths[:, i, :]
        if shuffle:
            block = block[rng.permutation(block.shape[0])]
        samples.append(block.copy())
    return MarginalDataset(traj.times[idx], tuple(samples))
