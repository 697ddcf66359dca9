"""Dense linear-algebra primitives used by the kernels and estimators."""

import numpy as np
import scipy.linalg

from .errors import DimensionError, NumericError, SingularMatrixError

# Gauss-Legendre nodes/weights on [-1, 1] for the covariance integral.
_GL_ORDER = 10
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(_GL_ORDER)

PSD_TOL = 1e-10


def as_square(A, name="A"):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericError(f"{name} contains non-finite entries")
    return A


def matrix_exp(A, t=1.0):
    """Return ``exp(A t)``.

    Uses scaling-and-squaring with a Pade core (``scipy.linalg.expm``).
    """
    A = as_square(A)
    t = float(t)
    if not np.isfinite(t):
        raise NumericError("t must be finite")
    if t == 0.0:
        return np.eye(A.shape[0])
    return scipy.linalg.expm(A * t)


def symmetrize(S):
    S = np.asarray(S, dtype=float)
    return 0.5 * (S + S.T)


def clip_psd(S):
    """Symmetrize ``S`` and set negative eigenvalues to zero."""
    S = symmetrize(S)
    w, V = np.linalg.eigh(S)
    if np.all(w >= 0):
        return S
    w = np.clip(w, 0.0, None)
    return symmetrize((V * w) @ V.T)


def is_psd(S, tol=PSD_TOL):
    """Check symmetry (relative ``tol``) and eigenvalues >= ``-tol * trace``."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        return False
    scale = max(np.abs(S).max(initial=0.0), 1.0)
    if np.abs(S - S.T).max(initial=0.0) > tol * scale:
        return False
    w = np.linalg.eigvalsh(symmetrize(S))
    return bool(w.min(initial=0.0) >= -tol * max(abs(np.trace(S)), 1e-300))


def transition_covariance(A, H, dt):
    """Covariance of the exact transition over a step ``dt``.

    Computes ``int_0^dt exp(A s) H exp(A^T s) ds`` by 10-point Gauss-Legendre
    quadrature, which is accurate far beyond double precision needs for
    ``|A| dt`` of order one.
    """
    A = as_square(A)
    H = as_square(H, "H")
    if A.shape != H.shape:
        raise DimensionError(f"A {A.shape} and H {H.shape} differ in shape")
    dt = float(dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not np.any(A):
        return symmetrize(H) * dt
    half = 0.5 * dt
    total = np.zeros_like(H)
    for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
        E = matrix_exp(A, half * (node + 1.0))
        total += weight * (E @ H @ E.T)
    return symmetrize(total * half)


def max_real_eigenvalue(A):
    A = as_square(A)
    try:
        eig = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.max(eig.real))


def regularized_inverse(S, lam_rel=0.0):
    """Return ``(S + lam I)^{-1}`` with ``lam = lam_rel * trace(S) / d``.

    Raises
    ------
    SingularMatrixError
        If the (regularized) matrix is singular to working precision.
    """
    S = symmetrize(as_square(S, "S"))
    if lam_rel < 0:
        raise ValueError("lam_rel must be nonnegative")
    d = S.shape[0]
    lam = lam_rel * np.trace(S) / d
    w, V = np.linalg.eigh(S + lam * np.eye(d))
    wmax = np.abs(w).max(initial=0.0)
    if wmax == 0.0 or w.min() <= 1e-13 * wmax:
        raise SingularMatrixError(
            "matrix is singular; pass lam_rel > 0 to regularize"
        )
    return symmetrize((V / w) @ V.T)


def floored_eigh(S, lam_rel=0.0):
    """Eigendecomposition of ``S`` with eigenvalues floored at ``lam_rel * trace(S) / d``.

    Unlike the additive shift of :func:`regularized_inverse`, a well-conditioned
    ``S`` is left untouched, and only the degenerate directions are lifted.
    """
    S = symmetrize(as_square(S, "S"))
    if lam_rel < 0:
        raise ValueError("lam_rel must be nonnegative")
    d = S.shape[0]
    w, V = np.linalg.eigh(S)
    w = np.maximum(w, lam_rel * np.trace(S) / d)
    wmax = np.abs(w).max(initial=0.0)
    if wmax == 0.0 or w.min() <= 1e-13 * wmax:
        raise SingularMatrixError("matrix is singular; pass lam_rel > 0 to regularize")
    return w, V


def floored_inverse_sqrt(S, lam_rel=0.0):
    """Symmetric ``W`` with ``W W = S_floor^{-1}`` (whitening transform)."""
    w, V = floored_eigh(S, lam_rel)
    return (V / np.sqrt(w)) @ V.T


def floored_inverse(S, lam_rel=0.0):
    w, V = floored_eigh(S, lam_rel)
    return symmetrize((V / w) @ V.T)


def floored_logdet(S, lam_rel=0.0):
    w, _ = floored_eigh(S, lam_rel)
    return float(np.sum(np.log(w)))


def psd_sqrt(S):
    """Symmetric square root of a PSD matrix (negative eigenvalues clipped)."""
    w, V = np.linalg.eigh(symmetrize(S))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
