"""Linear additive-noise SDE parameters, random generators and reference kernels.

The model is ``dX_t = A X_t dt + G dW_t`` with observational diffusion
``H = G G^T``.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .errors import DimensionError, GenerationError
from .linalg import (
    as_square,
    is_psd,
    matrix_exp,
    max_real_eigenvalue,
    symmetrize,
    transition_covariance,
)

MAX_REJECTIONS = 200
EDGE_THRESHOLD = 0.5

KINDS = ("dense", "causal_sufficient", "latent_confounded")
SCHEMES = ("exact", "linearized", "hybrid")


@dataclass(frozen=True)
class SdeParams:
    """Drift ``A`` (d x d), diffusion ``H`` (d x d PSD) and optional factor ``G``."""

    A: np.ndarray
    H: np.ndarray
    G: np.ndarray | None = None

    def __post_init__(self):
        A = as_square(self.A)
        H = as_square(self.H, "H")
        if A.shape != H.shape:
            raise DimensionError(f"A {A.shape} and H {H.shape} differ in shape")
        if not is_psd(H):
            raise ValueError("H must be symmetric positive semi-definite")
        G = self.G
        if G is not None:
            G = np.atleast_2d(np.asarray(G, dtype=float))
            if G.shape[0] != A.shape[0]:
                raise DimensionError(f"G must have {A.shape[0]} rows, got {G.shape}")
            if np.abs(G @ G.T - H).max() > 1e-10 * max(1.0, np.abs(H).max()):
                raise ValueError("G G^T does not match H")
            G.setflags(write=False)
        A.setflags(write=False)
        H.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "G", G)

    @classmethod
    def from_factor(cls, A, G):
        G = np.atleast_2d(np.asarray(G, dtype=float))
        return cls(A, symmetrize(G @ G.T), G)

    @property
    def d(self):
        return self.A.shape[0]

    def to_dict(self):
        out = {"d": self.d, "A": self.A.tolist(), "H": self.H.tolist()}
        if self.G is not None:
            out["G"] = self.G.tolist()
        return out

    @classmethod
    def from_dict(cls, obj):
        params = cls(obj["A"], obj["H"], obj.get("G"))
        if "d" in obj and int(obj["d"]) != params.d:
            raise DimensionError(f"declared d={obj['d']} but matrices are {params.d}x{params.d}")
        return params

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class InitialDistribution:
    """Discrete law ``sum_k w_k delta_{x_k}`` over ``support`` (k x d)."""

    support: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, dtype=float))
        if support.size == 0:
            raise ValueError("support must be non-empty")
        if not np.all(np.isfinite(support)):
            raise ValueError("support vectors must be finite")
        k = support.shape[0]
        if self.weights is None:
            weights = np.full(k, 1.0 / k)
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape != (k,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative, one per support point, summing to 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @property
    def d(self):
        return self.support.shape[1]

    def sample(self, rng, size):
        idx = rng.choice(self.support.shape[0], size=size, p=self.weights)
        return self.support[idx]


@dataclass(frozen=True)
class TransitionKernel:
    """Gaussian transition ``y | x ~ N(phi x, cov)`` over a step ``dt``."""

    phi: np.ndarray
    cov: np.ndarray
    dt: float
    scheme: str = field(default="linearized")

    def mean(self, x):
        return np.asarray(x) @ self.phi.T


def check_spanning_support(p0):
    """True iff the support points of ``p0`` span R^d.

    A spanning discrete initial law is not auto-rotationally invariant, which
    makes drift and diffusion identifiable from the time marginals.
    """
    X = p0.support if isinstance(p0, InitialDistribution) else np.atleast_2d(p0)
    s = np.linalg.svd(X, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return False
    rank = int(np.sum(s > 1e-10 * s[0]))
    return rank == X.shape[1]


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _edge_weights(rng, size):
    # |w| ~ Unif(0.5, 5), kept strictly above the graph threshold.
    mags = rng.uniform(EDGE_THRESHOLD, 5.0, size=size)
    while np.any(bad := mags <= EDGE_THRESHOLD + 1e-9):
        mags[bad] = rng.uniform(EDGE_THRESHOLD, 5.0, size=int(bad.sum()))
    signs = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return signs * mags


def _stable_drift(draw, max_rejections):
    for _ in range(max_rejections):
        A = draw()
        if max_real_eigenvalue(A) < 1.0:
            return A
    raise GenerationError(
        f"no drift with max real eigenvalue < 1 after {max_rejections} draws"
    )


def gen_random_sde(d, kind="dense", edge_prob=0.25, seed=None, self_loops=True,
                   max_rejections=MAX_REJECTIONS):
    """Draw a random SDE following the benchmark protocols.

    Parameters
    ----------
    d : int
        State dimension.
    kind : {"dense", "causal_sufficient", "latent_confounded"}
        ``dense``: A ~ Unif(-5, 5)^{d x d}, G ~ Unif(-1, 1)^{d x d}.
        ``causal_sufficient``: each drift slot is an edge with probability
        ``edge_prob`` and weight +-Unif(0.5, 5); G diagonal ~ Unif(0, 1).
        ``latent_confounded``: same drift; G gets Unif{1..floor(2d/3)} extra
        columns with two unit entries each, modelling pairwise confounders.
    edge_prob : float
        Edge inclusion probability for the causal kinds.
    seed : int or numpy Generator
    self_loops : bool
        Whether diagonal drift slots are candidate edges in the causal kinds.
    max_rejections : int
        Draws of A allowed before giving up on the eigenvalue constraint.
        Dense drifts are accepted with probability about 0.2 at d = 3 but
        only about 5e-5 at d = 10, where the default of 200 is far too low.

    Returns
    -------
    params : SdeParams
    graph : CausalGraph or None
        Ground-truth graph (causal kinds only), thresholded at 0.5.
    """
    from .causal import extract_graph

    if d < 1:
        raise ValueError("d must be >= 1")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    if max_rejections < 1:
        raise ValueError("max_rejections must be >= 1")
    rng = _rng(seed)

    if kind == "dense":
        A = _stable_drift(lambda: rng.uniform(-5.0, 5.0, size=(d, d)), max_rejections)
        G = rng.uniform(-1.0, 1.0, size=(d, d))
        return SdeParams.from_factor(A, G), None

    slots = np.ones((d, d), dtype=bool)
    if not self_loops:
        np.fill_diagonal(slots, False)

    def draw():
        mask = slots & (rng.random((d, d)) < edge_prob)
        A = np.zeros((d, d))
        A[mask] = _edge_weights(rng, int(mask.sum()))
        return A

    A = _stable_drift(draw, max_rejections)
    G = np.diag(rng.uniform(0.0, 1.0, size=d))
    if kind == "latent_confounded" and d >= 2:
        n_conf = int(rng.integers(1, max(1, (2 * d) // 3) + 1))
        extra = np.zeros((d, n_conf))
        for k in range(n_conf):
            rows = rng.choice(d, size=2, replace=False)
            extra[rows, k] = 1.0
        G = np.hstack([G, extra])
    params = SdeParams.from_factor(A, G)
    return params, extract_graph(params.A, params.H, EDGE_THRESHOLD)


def gen_default_initial(d, seed=None):
    """Uniform law over ``d`` linearly independent points with |entries| in [2, 10]."""
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = _rng(seed)
    for _ in range(MAX_REJECTIONS):
        mags = rng.uniform(2.0, 10.0, size=(d, d))
        signs = np.where(rng.random((d, d)) < 0.5, -1.0, 1.0)
        p0 = InitialDistribution(mags * signs)
        if check_spanning_support(p0):
            return p0
    raise GenerationError(f"no spanning support after {MAX_REJECTIONS} draws")


def default_scheme(d):
    return "hybrid" if d == 1 else "linearized"


def reference_kernel(params, dt, scheme=None):
    """Gaussian transition kernel of ``params`` over ``dt``.

    ``exact``: mean map ``exp(A dt)``, covariance the integrated diffusion.
    ``linearized``: mean map ``I + A dt``, covariance ``H dt``.
    ``hybrid``: mean map ``exp(A dt)``, covariance ``H dt``. This is the
    likelihood the closed-form 1-D estimators maximize, so it is the 1-D
    default: with ``exact`` the refit diffusion undershoots the reference
    every iteration.
    """
    dt = float(dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    scheme = scheme or default_scheme(params.d)
    if scheme == "exact":
        phi = matrix_exp(params.A, dt)
        cov = transition_covariance(params.A, params.H, dt)
    elif scheme == "linearized":
        phi = np.eye(params.d) + params.A * dt
        cov = params.H * dt
    elif scheme == "hybrid":
        phi = matrix_exp(params.A, dt)
        cov = params.H * dt
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return TransitionKernel(phi, cov, dt, scheme)
