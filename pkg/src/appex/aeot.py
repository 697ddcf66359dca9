"""Anisotropic entropic optimal transport between adjacent snapshots.

The transport problem between empirical marginals ``a`` (on ``xs``) and ``b``
(on ``ys``) is::

    min_{pi in Pi(a, b)}  <C, pi> + KL(pi || a (x) b),
    C[j, k] = 1/2 (y_k - Phi x_j)^T Sigma^{-1} (y_k - Phi x_j),

whose solution is ``diag(u) exp(-C) diag(v)``. Sinkhorn finds the scalings.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import logging

import numpy as np
import scipy.linalg
from scipy.linalg.blas import dsyrk as _syrk

from .errors import (
    ConvergenceError,
    DegenerateCouplingError,
    DimensionError,
    NumericError,
)
from .linalg import floored_inverse_sqrt
from .simulate import TrajectorySet

log = logging.getLogger(__name__)

MODES = ("standard", "log_domain")
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 5000
DEFAULT_LAM_REL = 1e-6

# exp(-C) underflows in double precision past this cost.
_UNDERFLOW_COST = 700.0
# Absorb the scalings into the log-potentials once they leave [e^-50, e^50].
_ABSORB_HI = np.exp(50.0)
_ABSORB_LO = np.exp(-50.0)
# Switch from Sinkhorn to Newton refinement after this many scaling sweeps.
DEFAULT_NEWTON_AFTER = 300
# ... or as soon as the marginal violation drops below this.
_NEWTON_SWITCH = 1e-2
_NEWTON_MAX_STEPS = 100
_LM_MU0 = 1e-9
_LM_MU_MIN = 1e-12
_LM_MU_MAX = 1e4
# Cold starts follow C / eps from eps ~ range(C) / _HOMOTOPY_RANGE down to 1,
# dividing eps by _HOMOTOPY_FACTOR per stage.
_HOMOTOPY_RANGE = 50.0
_HOMOTOPY_FACTOR = 4.0
_HOMOTOPY_SWEEPS = 30
_HOMOTOPY_TOL = 1e-4


@dataclass
class Coupling:
    """Entropic OT plan with its target marginals and solver diagnostics.

    ``log_u`` and ``log_v`` are the dual log-potentials, so that
    ``plan = exp(log_u[:, None] - C + log_v[None, :])``.
    """

    plan: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    residual: float = 0.0
    n_iter: int = 0
    converged: bool = True
    log_u: np.ndarray | None = None
    log_v: np.ndarray | None = None

    @property
    def shape(self):
        return self.plan.shape

    def marginal_violation(self):
        row = np.abs(self.plan.sum(axis=1) - self.row_marginal).sum()
        col = np.abs(self.plan.sum(axis=0) - self.col_marginal).sum()
        return float(max(row, col))

    def to_csv(self, path):
        """Dense dump ``row,col,mass`` for debugging."""
        rows, cols = np.indices(self.plan.shape)
        table = np.column_stack([rows.ravel(), cols.ravel(), self.plan.ravel()])
        np.savetxt(path, table, delimiter=",", header="row,col,mass", comments="",
                   fmt=["%d", "%d", "%.17g"])


def logsumexp(X, axis):
    m = X.max(axis=axis, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    return (np.log(np.exp(X - m).sum(axis=axis, keepdims=True)) + m).squeeze(axis)


def uniform(n):
    return np.full(n, 1.0 / n)


def build_cost_matrix(kernel, xs, ys, lam_rel=DEFAULT_LAM_REL):
    """Half squared Mahalanobis residual of each pair under ``kernel``.

    ``C[j, k] = 1/2 (y_k - Phi x_j)^T S^{-1} (y_k - Phi x_j)``. Eigenvalues of
    the kernel covariance below ``lam_rel * trace / d`` are raised to that floor
    before inverting, so rank-deficient diffusions stay usable.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    d = kernel.phi.shape[0]
    if xs.shape[1] != d or ys.shape[1] != d:
        raise DimensionError(f"samples must have dimension {d}")
    W = floored_inverse_sqrt(kernel.cov, lam_rel)
    mu = kernel.mean(xs) @ W
    yw = ys @ W
    diff = yw[None, :, :] - mu[:, None, :]
    return 0.5 * np.einsum("jkd,jkd->jk", diff, diff)


def _check_marginal(w, n, name):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape != (n,):
        raise DimensionError(f"{name} must have length {n}, got {w.shape}")
    if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
        raise ValueError(f"{name} must be strictly positive and sum to 1")
    return w


def _finish(plan, a, b, log_u, log_v, n_iter, tol, max_iter):
    row = np.abs(plan.sum(axis=1) - a).sum()
    col = np.abs(plan.sum(axis=0) - b).sum()
    residual = float(max(row, col))
    converged = residual <= tol
    if not converged and n_iter >= max_iter and residual > 10 * tol:
        raise ConvergenceError(residual, n_iter)
    return Coupling(plan, a, b, residual, n_iter, converged, log_u, log_v)


def _sinkhorn_standard(C, a, b, tol, max_iter):
    K = np.exp(-C)
    # A flushed kernel entry silently changes the problem being solved.
    if K.min() < np.finfo(float).tiny:
        raise NumericError("exp(-cost) underflows; use mode='log_domain'")
    u = np.ones_like(a)
    v = np.ones_like(b)
    n_iter = 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        while True:
            Kv = K @ v
            if n_iter > 0 and np.abs(u * Kv - a).sum() <= tol:
                break
            if n_iter >= max_iter:
                break
            u = a / Kv
            KTu = K.T @ u
            v = b / KTu
            n_iter += 1
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise NumericError(
                    "standard Sinkhorn under/overflowed; use mode='log_domain'"
                )
    plan = u[:, None] * K * v[None, :]
    return _finish(plan, a, b, np.log(u), np.log(v), n_iter, tol, max_iter)


def _semidual(C, log_a, g):
    # Row potential in closed form given g, and the resulting plan.
    f = log_a - logsumexp(g[None, :] - C, axis=1)
    with np.errstate(over="ignore"):
        plan = np.exp(f[:, None] + g[None, :] - C)
    return f, plan


def _newton(C, a, b, g, tol, max_steps):
    """Levenberg-Marquardt-damped Newton ascent on the semi-dual.

    The semi-dual ``g -> <b, g> + <a, f(g)>`` has negative Hessian
    ``diag(c) - P^T diag(1/a) P``, a weighted graph Laplacian with null
    vector 1. One potential is pinned and the system is Jacobi-scaled, so the
    reduced matrix is ``I - M`` with ``M`` doubly substochastic. A ridge
    ``mu I`` grows when a step fails to ascend and shrinks when it succeeds,
    giving scaled-gradient steps far from the optimum and quadratic
    convergence near it.
    """
    log_a = np.log(a)
    log_b = np.log(b)
    inv_sqrt_a = 1.0 / np.sqrt(a)
    f, P = _semidual(C, log_a, g)
    value = b @ g + a @ f
    mu = _LM_MU0
    steps = 0
    while steps < max_steps:
        c = P.sum(axis=0)
        grad = b - c
        if np.abs(grad).sum() <= tol:
            break
        steps += 1
        keep = np.arange(c.size) != np.argmax(c)
        s = 1.0 / np.sqrt(np.maximum(c[keep], 1e-300))
        Q = np.asfortranarray(P[:, keep] * inv_sqrt_a[:, None] * s[None, :])
        # Upper triangle of -Q^T Q; the symmetric solvers only read that half.
        M = _syrk(alpha=-1.0, a=Q, trans=1)
        rhs = s * grad[keep]
        moved = False
        while mu <= _LM_MU_MAX:
            L = M.copy(order="F")
            L[np.diag_indices_from(L)] += 1.0 + mu
            try:
                x = scipy.linalg.cho_solve(
                    scipy.linalg.cho_factor(L, lower=False, overwrite_a=True, check_finite=False),
                    rhs, check_finite=False)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            delta = np.zeros_like(g)
            delta[keep] = s * x
            g_new = g + delta
            f_new, P_new = _semidual(C, log_a, g_new)
            new_value = b @ g_new + a @ f_new
            if np.isfinite(new_value) and new_value >= value + 1e-4 * (grad @ delta):
                mu = max(mu * 0.1, _LM_MU_MIN)
                moved = True
                break
            mu *= 10.0
        if not moved:
            # Fall back to an exact Sinkhorn half-step, which always ascends.
            g_new = log_b - logsumexp(f[:, None] - C, axis=0)
            f_new, P_new = _semidual(C, log_a, g_new)
            new_value = b @ g_new + a @ f_new
        else:
            # Columns starved of mass have a vanishing Hessian block that
            # Newton cannot move; reset them by the exact column update.
            starved = P_new.sum(axis=0) < 0.5 * b
            if np.any(starved):
                g_new = g_new.copy()
                g_new[starved] = log_b[starved] - logsumexp(
                    f_new[:, None] - C[:, starved], axis=0)
                f_new, P_new = _semidual(C, log_a, g_new)
                new_value = b @ g_new + a @ f_new
        g, f, P, value = g_new, f_new, P_new, new_value
    return f, g, P, steps


def _scaling(C, a, b, g, tol, budget, switch=0.0):
    """Stabilized scaling sweeps from column potential ``g``.

    Potentials ``(f, g)`` live in log space and the kernel ``exp(f + g - C)``
    is rebuilt whenever the bounded scalings ``(u, v)`` grow. Stops when the
    row violation is at most ``max(tol, switch)`` or after ``budget`` sweeps.
    Returns ``f, g, sweeps, row violation``.
    """
    log_a = np.log(a)
    log_b = np.log(b)
    f = log_a - logsumexp(g[None, :] - C, axis=1)
    g = log_b - logsumexp(f[:, None] - C, axis=0)
    K = np.exp(f[:, None] + g[None, :] - C)
    u = np.ones_like(a)
    v = np.ones_like(b)
    n_iter = 1
    stop = max(tol, switch)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        while True:
            Kv = K @ v
            res = np.abs(u * Kv - a).sum()
            if res <= stop or n_iter >= budget:
                break
            u = a / Kv
            KTu = K.T @ u
            v = b / KTu
            n_iter += 1
            bad = not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))) or (
                np.any(u == 0) or np.any(v == 0)
            )
            if bad:
                # A row or column of the stabilized kernel underflowed:
                # fall back to one exact log-domain sweep.
                f = log_a - logsumexp(g[None, :] - C, axis=1)
                g = log_b - logsumexp(f[:, None] - C, axis=0)
            elif (u.max() > _ABSORB_HI or v.max() > _ABSORB_HI
                    or u.min() < _ABSORB_LO or v.min() < _ABSORB_LO):
                f = f + np.log(u)
                g = g + np.log(v)
            else:
                continue
            K = np.exp(f[:, None] + g[None, :] - C)
            u = np.ones_like(a)
            v = np.ones_like(b)
    return f + np.log(u), g + np.log(v), n_iter, float(res)


def _homotopy(C, a, b, tol):
    # Follow the solution path of C / eps for eps shrinking geometrically to 1.
    # Each stage is polished by Newton and warm-starts the next, so every
    # solve starts inside the fast basin even when exp(-C) is extremely peaked.
    eps = _HOMOTOPY_FACTOR ** np.floor(
        np.log(max(np.ptp(C) / _HOMOTOPY_RANGE, 1.0)) / np.log(_HOMOTOPY_FACTOR))
    g = np.zeros_like(b)
    n_iter = 0
    while True:
        Ce = C / eps if eps > 1.0 else C
        _, g, k, _ = _scaling(Ce, a, b, g, tol, _HOMOTOPY_SWEEPS)
        f, g, P, steps = _newton(Ce, a, b, g, tol if eps <= 1.0 else _HOMOTOPY_TOL,
                                 _NEWTON_MAX_STEPS)
        n_iter += k + steps
        if eps <= 1.0:
            return f, g, P, n_iter
        nxt = max(eps / _HOMOTOPY_FACTOR, 1.0)
        g = g * (eps / nxt)
        eps = nxt


def _sinkhorn_log(C, a, b, tol, max_iter, init=None, newton_after=None):
    g = np.zeros_like(b) if init is None else np.array(init[1], dtype=float)
    if newton_after is None:
        f, g, n_iter, _ = _scaling(C, a, b, g, tol, max_iter)
        plan = np.exp(f[:, None] + g[None, :] - C)
        return _finish(plan, a, b, f, g, n_iter, tol, max_iter)
    if init is not None:
        f, g, n_iter, _ = _scaling(C, a, b, g, tol, min(max_iter, newton_after), _NEWTON_SWITCH)
        f, g, plan, steps = _newton(C, a, b, g, tol, _NEWTON_MAX_STEPS)
        n_iter += steps
        if _violation(plan, a, b) <= tol:
            return _finish(plan, a, b, f, g, n_iter, tol, n_iter)
        log.debug("warm start stalled at %.2e; restarting along the homotopy",
                  _violation(plan, a, b))
    else:
        n_iter = 0
    f, g, plan, k = _homotopy(C, a, b, tol)
    n_iter += k
    return _finish(plan, a, b, f, g, n_iter, tol, n_iter)


def _violation(plan, a, b):
    return float(max(np.abs(plan.sum(axis=1) - a).sum(), np.abs(plan.sum(axis=0) - b).sum()))


def sinkhorn(cost, a=None, b=None, mode=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
             init=None, newton_after=DEFAULT_NEWTON_AFTER):
    """Solve the entropic OT problem with kernel ``exp(-cost)``.

    Parameters
    ----------
    cost : (n, m) array
    a, b : arrays, optional
        Strictly positive marginals; uniform when omitted.
    mode : {"standard", "log_domain"}, optional
        ``standard`` scales ``exp(-cost)`` directly. ``log_domain`` keeps the
        dual potentials in log space and never forms ``exp(-cost)`` unscaled.
        By default ``standard`` is tried first unless ``exp(-cost)`` would
        underflow, and ``log_domain`` takes over if it does not converge.
    tol : float
        Stop once the L1 marginal violation is at most ``tol``.
    max_iter : int
        Iteration cap. Ending above ``10 * tol`` raises ``ConvergenceError``;
        ending between ``tol`` and ``10 * tol`` returns ``converged=False``.
    init : (log_u, log_v), optional
        Warm start for ``log_domain`` mode (only ``log_v`` is used).
    newton_after : int or None
        ``log_domain`` only. If the scaling sweeps have not converged after
        this many iterations, the dual potentials are refined by damped Newton
        steps on the semi-dual (same fixed point, quadratic convergence).
        ``None`` disables the refinement.

    Returns
    -------
    Coupling
    """
    C = np.atleast_2d(np.asarray(cost, dtype=float))
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    n, m = C.shape
    a = uniform(n) if a is None else _check_marginal(a, n, "a")
    b = uniform(m) if b is None else _check_marginal(b, m, "b")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if mode is None:
        if C.max() <= _UNDERFLOW_COST:
            try:
                coupling = _sinkhorn_standard(C, a, b, tol, max_iter)
                if coupling.converged:
                    return coupling
            except NumericError:
                pass
            log.debug("standard scaling stalled; retrying in the log domain")
        mode = "log_domain"
    if mode == "standard":
        return _sinkhorn_standard(C, a, b, tol, max_iter)
    if mode == "log_domain":
        if init is not None and np.shape(init[1]) != (m,):
            init = None
        return _sinkhorn_log(C, a, b, tol, max_iter, init, newton_after)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def sinkhorn_batch(costs, marginals=None, workers=1, inits=None, **kwargs):
    """Solve independent problems, concurrently when ``workers > 1``.

    Failures carry the index of the offending problem in ``pair``.
    """
    n = len(costs)
    marginals = marginals or [(None, None)] * n
    inits = inits or [None] * n

    def solve(i):
        a, b = marginals[i]
        try:
            return sinkhorn(costs[i], a, b, init=inits[i], **kwargs)
        except ConvergenceError as exc:
            exc.pair = i
            raise

    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve, range(n)))
    return [solve(i) for i in range(n)]


def sample_paths(couplings, data, n_paths, seed=0):
    """Draw paths from the Markov concatenation of adjacent couplings.

    The first index follows the first plan's row sums; each next index is drawn
    from the current row of the next plan, normalized.

    Parameters
    ----------
    couplings : list of Coupling
        ``couplings[i]`` links snapshot ``i`` to snapshot ``i + 1`` of ``data``.
    data : MarginalDataset
    n_paths : int
    seed : int
    """
    if len(couplings) != len(data) - 1:
        raise DimensionError(f"need {len(data) - 1} couplings, got {len(couplings)}")
    for i in range(len(couplings) - 1):
        gap = np.abs(couplings[i].plan.sum(axis=0) - couplings[i + 1].plan.sum(axis=1)).sum()
        if gap > 1e-6:
            raise ValueError(f"couplings {i} and {i + 1} disagree on their shared marginal (L1 {gap:.2e})")
    for i, c in enumerate(couplings):
        if c.plan.shape != (data.counts[i], data.counts[i + 1]):
            raise DimensionError(f"coupling {i} has shape {c.plan.shape}, snapshots are "
                                 f"{data.counts[i]} x {data.counts[i + 1]}")
    N = len(data)
    paths = np.empty((n_paths, N, data.d))
    if n_paths == 0:
        return TrajectorySet(data.times, paths)
    rng = np.random.default_rng(seed)
    first = couplings[0].plan.sum(axis=1)
    idx = rng.choice(first.size, size=n_paths, p=first / first.sum())
    paths[:, 0] = data.samples[0][idx]
    for i, c in enumerate(couplings):
        mass = c.plan.sum(axis=1)
        if np.any(mass[idx] <= 0):
            raise DegenerateCouplingError(f"coupling {i} has an empty row reached by a path")
        cdf = np.cumsum(c.plan[idx], axis=1) / mass[idx, None]
        draws = rng.random(n_paths)
        idx = np.minimum((cdf < draws[:, None]).sum(axis=1), c.plan.shape[1] - 1)
        paths[:, i + 1] = data.samples[i + 1][idx]
    return TrajectorySet(data.times, paths)


@dataclass(frozen=True)
class CouplingMoments:
    """Second moments of one coupling: ``E[x x^T]``, ``E[y x^T]``, ``E[y y^T]``.

    Expectations are under the plan itself, so the three matrices are moments
    of a single probability measure.
    """

    Exx: np.ndarray
    Eyx: np.ndarray
    Eyy: np.ndarray
    dt: float

    @property
    def Edx(self):
        """``E[(y - x) x^T]``."""
        return self.Eyx - self.Exx

    def residual(self, phi):
        """``E[(y - phi x)(y - phi x)^T]`` for a linear mean map ``phi``."""
        R = self.Eyy - self.Eyx @ phi.T - phi @ self.Eyx.T + phi @ self.Exx @ phi.T
        return 0.5 * (R + R.T)

    def Sres(self, A):
        """``E[r r^T]`` with ``r = (y - x) - A x dt``."""
        return self.residual(np.eye(A.shape[0]) + A * self.dt)


def coupling_moments(coupling, xs, ys, dt):
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    P = coupling.plan
    if P.shape != (xs.shape[0], ys.shape[0]):
        raise DimensionError(f"plan {P.shape} does not match samples {xs.shape[0]} x {ys.shape[0]}")
    if xs.shape[1] != ys.shape[1]:
        raise DimensionError("xs and ys differ in dimension")
    row = P.sum(axis=1)
    col = P.sum(axis=0)
    Exx = (xs * row[:, None]).T @ xs
    Eyy = (ys * col[:, None]).T @ ys
    Eyx = ys.T @ (P.T @ xs)
    return CouplingMoments(0.5 * (Exx + Exx.T), Eyx, 0.5 * (Eyy + Eyy.T), float(dt))
