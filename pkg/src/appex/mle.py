"""Closed-form maximum likelihood estimators for drift and diffusion.

Every estimator accepts either a :class:`~appex.simulate.TrajectorySet`
(sums over paths) or a list of :class:`~appex.aeot.CouplingMoments`
(expectations under inferred couplings). Both reduce to the same per-interval
second moments, so the two routes give identical estimates on matching input.
"""

import numpy as np

from .aeot import CouplingMoments
from .errors import ExactEstimatorError, RankDeficiencyError
from .linalg import clip_psd
from .simulate import TrajectorySet

MAX_CONDITION = 1e12


def _uniform_dt(times, rtol=1e-6):
    steps = np.diff(times)
    if steps.size == 0:
        raise ValueError("at least one interval is required")
    dt = float(steps.mean())
    if np.any(np.abs(steps - dt) > rtol * dt):
        raise ValueError("estimators require equally spaced times")
    return dt


def trajectory_moments(traj):
    """Per-interval moments of a trajectory set, weighted by path probabilities."""
    dt = _uniform_dt(traj.times)
    M = traj.n_paths
    w = np.full(M, 1.0 / M) if traj.weights is None else traj.weights
    out = []
    for i in range(traj.n_times - 1):
        x = traj.paths[:, i]
        y = traj.paths[:, i + 1]
        xw = x * w[:, None]
        yw = y * w[:, None]
        out.append(CouplingMoments(xw.T @ x, yw.T @ x, yw.T @ y, dt))
    return out


def as_moments(source):
    """Normalize a TrajectorySet or sequence of CouplingMoments to a list of moments."""
    if isinstance(source, TrajectorySet):
        if source.n_paths == 0:
            raise ValueError("no trajectories to estimate from")
        return trajectory_moments(source)
    moments = list(source)
    if not moments:
        raise ValueError("at least one interval is required")
    dts = np.array([m.dt for m in moments])
    if not np.all(dts > 0):
        raise ValueError("dt must be positive")
    if np.any(np.abs(dts - dts[0]) > 1e-6 * dts[0]):
        raise ValueError("estimators require equally spaced times")
    return moments


def mle_drift(source):
    """Linearized-kernel MLE of the drift.

    ``A = (1/dt) [sum_i E(dX_i X_i^T)] [sum_i E(X_i X_i^T)]^{-1}``.
    Does not depend on the diffusion.

    Raises
    ------
    RankDeficiencyError
        If the pooled state second moment has condition number >= 1e12,
        i.e. the states do not span R^d.
    """
    moments = as_moments(source)
    dt = moments[0].dt
    Sxx = sum(m.Exx for m in moments)
    Sdx = sum(m.Edx for m in moments)
    if np.linalg.cond(Sxx) >= MAX_CONDITION:
        raise RankDeficiencyError(
            "state second-moment matrix is singular; the observed states do not "
            "span R^d (use an initial distribution whose support spans R^d)"
        )
    return np.linalg.solve(Sxx, Sdx.T).T / dt


def mle_diffusion(source, A):
    """MLE of ``H`` given drift ``A``: mean residual outer product per unit time.

    ``H = (1/T) sum_i E(r_i r_i^T)``, ``r_i = dX_i - A X_i dt``, ``T = (N-1) dt``,
    symmetrized and clipped to the PSD cone.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if isinstance(source, TrajectorySet):
        # Direct residuals avoid cancellation in the moment expansion.
        dt = _uniform_dt(source.times)
        X = source.paths
        M = source.n_paths
        w = np.full(M, 1.0 / M) if source.weights is None else source.weights
        r = (X[:, 1:] - X[:, :-1]) - (X[:, :-1] @ A.T) * dt
        S = np.einsum("j,jia,jib->ab", w, r, r)
        return clip_psd(S / ((source.n_times - 1) * dt))
    moments = as_moments(source)
    T = len(moments) * moments[0].dt
    S = sum(m.Sres(A) for m in moments)
    return clip_psd(S / T)


def mle_drift_exact_1d(source):
    """Exact-kernel MLE of a scalar drift: ``log(sum X_{i+1} X_i / sum X_i^2) / dt``."""
    moments = as_moments(source)
    if moments[0].Exx.shape != (1, 1):
        raise ValueError("exact estimator applies to d = 1 only")
    dt = moments[0].dt
    cross = float(sum(m.Eyx[0, 0] for m in moments))
    square = float(sum(m.Exx[0, 0] for m in moments))
    if not (cross > 0 and square > 0):
        raise ExactEstimatorError(
            "log argument is not positive; fall back to the linearized estimator"
        )
    return np.log(cross / square) / dt


def mle_diffusion_exact_1d(source, a):
    """Exact-kernel MLE of the scalar diffusion given drift ``a``."""
    if isinstance(source, TrajectorySet):
        if source.d != 1:
            raise ValueError("exact estimator applies to d = 1 only")
        dt = _uniform_dt(source.times)
        X = source.paths[:, :, 0]
        M = source.n_paths
        w = np.full(M, 1.0 / M) if source.weights is None else source.weights
        r = X[:, 1:] - np.exp(float(a) * dt) * X[:, :-1]
        return float(w @ (r**2).sum(axis=1)) / ((source.n_times - 1) * dt)
    moments = as_moments(source)
    if moments[0].Exx.shape != (1, 1):
        raise ValueError("exact estimator applies to d = 1 only")
    dt = moments[0].dt
    phi = np.array([[np.exp(float(a) * dt)]])
    T = len(moments) * dt
    return max(float(sum(m.residual(phi)[0, 0] for m in moments)) / T, 0.0)
