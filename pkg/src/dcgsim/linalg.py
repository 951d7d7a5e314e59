"""Dense linear-algebra primitives and centralized oracles.

Everything here works on plain ``numpy`` float64 arrays. The matrices involved
are desk scale (a few hundred rows at most), so nothing is sparse.
"""
from dataclasses import dataclass

import numpy as np

from .errors import (
    NoConvergence,
    NotPositiveDefinite,
    NotSymmetric,
    OutOfDomain,
    SingularMatrix,
    ZeroDiagonal,
)

PIVOT_RTOL = 1e-12
SYMMETRY_ATOL = 1e-10
POWER_TOL = 1e-10
POWER_MAX_ITERS = 100_000


def as_matrix(a):
    """Return ``a`` as a finite 2-D float64 array (copy-free when possible)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def as_vector(b):
    b = np.asarray(b, dtype=float)
    if b.ndim not in (1, 2):
        raise ValueError(f"expected a vector (or column block), got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("vector has non-finite entries")
    return b


@dataclass(frozen=True)
class SplitPair:
    """A splitting ``A = m - n_mat`` with ``m`` non-singular."""

    m: np.ndarray
    n_mat: np.ndarray


@dataclass(frozen=True)
class EigenExtremes:
    lambda_min: float
    lambda_max: float


def direct_solve(a, b):
    """Solve ``a x = b`` by Gaussian elimination with partial pivoting.

    ``b`` may be a vector or an ``(n, k)`` block of right-hand sides.

    Raises
    ------
    SingularMatrix
        If a pivot falls below ``1e-12`` times the largest initial entry
        magnitude of ``a``.
    """
    a = as_matrix(a)
    b = as_vector(b)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"matrix must be square, got {a.shape}")
    if b.shape[0] != n:
        raise ValueError(f"rhs length {b.shape[0]} does not match matrix size {n}")

    scale = np.abs(a).max() if a.size else 0.0
    threshold = PIVOT_RTOL * scale
    if scale == 0.0:
        raise SingularMatrix("zero matrix")

    vector_rhs = b.ndim == 1
    aug = np.hstack([a, b.reshape(n, -1)]).astype(float, copy=True)

    for k in range(n):
        p = k + int(np.argmax(np.abs(aug[k:, k])))
        if abs(aug[p, k]) < threshold:
            raise SingularMatrix(f"pivot {k} below threshold ({abs(aug[p, k]):.3e})")
        if p != k:
            aug[[k, p]] = aug[[p, k]]
        factors = aug[k + 1:, k] / aug[k, k]
        aug[k + 1:, k:] -= np.outer(factors, aug[k, k:])

    x = np.zeros((n, aug.shape[1] - n))
    for k in range(n - 1, -1, -1):
        x[k] = (aug[k, n:] - aug[k, k + 1:n] @ x[k + 1:]) / aug[k, k]
    return x[:, 0] if vector_rhs else x


def matrix_split(a, scheme):
    """Split ``a = D - L - U`` into ``(m, n_mat)`` for ``"jacobi"`` or ``"gauss_seidel"``.

    ``-L`` and ``-U`` are the strictly lower and strictly upper triangles of ``a``.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    d = np.diag(np.diag(a))
    lower = -np.tril(a, -1)
    upper = -np.triu(a, 1)
    if scheme == "jacobi":
        if np.any(np.diag(a) == 0.0):
            raise ZeroDiagonal("jacobi splitting needs a nonzero diagonal")
        m, n_mat = d, lower + upper
    elif scheme == "gauss_seidel":
        m, n_mat = d - lower, upper
    else:
        raise ValueError(f"unknown splitting scheme {scheme!r}")
    # raises SingularMatrix when m cannot be inverted
    direct_solve(m, np.ones(a.shape[0]))
    return SplitPair(m=m, n_mat=n_mat)


def iteration_matrix(split):
    """Return ``G = M^{-1} N`` for a splitting."""
    return direct_solve(split.m, split.n_mat)


def _power(apply, v0, tol, max_iters, rayleigh):
    """Power iteration from ``v0``.

    Returns ``(estimate, iterations, collapsed)``. With ``rayleigh`` the
    estimate is ``v^T A v`` (symmetric operators); otherwise it is the growth
    factor ``||A v||`` of the unit iterate.
    """
    v = v0 / np.linalg.norm(v0)
    previous = None
    for it in range(1, max_iters + 1):
        w = apply(v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0, it, True
        estimate = float(v @ w) if rayleigh else float(norm_w)
        v = w / norm_w
        if previous is not None and abs(estimate - previous) <= tol * abs(estimate):
            return estimate, it, False
        previous = estimate
    raise NoConvergence(
        f"power iteration did not settle within {max_iters} iterations", best=previous
    )


def _dominant(apply, n, tol, max_iters, rayleigh):
    """Dominant eigenvalue with the all-ones start and a basis-vector fallback.

    An all-ones start that is orthogonal to the dominant eigenvector shows up
    either as a collapse to zero or as an estimate that is stationary from the
    first step; in both cases the basis vectors are tried as well and the
    largest estimate wins.
    """
    estimate, iters, collapsed = _power(apply, np.ones(n), tol, max_iters, rayleigh)
    if not collapsed and iters > 2:
        return estimate
    best = estimate
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        other, _, other_collapsed = _power(apply, e, tol, max_iters, rayleigh)
        best = max(best, other)
        if not other_collapsed:
            break
    return best


def spectral_radius(g, tol=POWER_TOL, max_iters=POWER_MAX_ITERS):
    """Largest eigenvalue magnitude of ``g`` by power iteration.

    The iteration runs on ``g @ g`` so that real eigenvalue pairs ``+-lambda``
    do not make the estimate oscillate; the result is the square root of the
    dominant growth factor. A dominant complex pair still has no fixed growth
    factor and ends in :class:`NoConvergence`.
    """
    g = as_matrix(g)
    n = g.shape[0]
    if g.shape[1] != n:
        raise ValueError(f"matrix must be square, got {g.shape}")
    if not np.any(g):
        return 0.0
    try:
        squared = _dominant(lambda v: g @ (g @ v), n, tol, max_iters, rayleigh=False)
    except NoConvergence as exc:
        best = None if exc.best is None else float(np.sqrt(exc.best))
        raise NoConvergence(str(exc), best=best) from None
    return float(np.sqrt(squared))


def convergence_rate(rho):
    """Asymptotic convergence rate ``-ln(rho)`` of a stationary iteration."""
    if not 0.0 < rho < 1.0:
        raise OutOfDomain(f"convergence rate needs 0 < rho < 1, got {rho}")
    return -float(np.log(rho))


def check_symmetric(a):
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"matrix is not square: {a.shape}")
    scale = max(1.0, float(np.abs(a).max())) if a.size else 1.0
    if np.any(np.abs(a - a.T) > SYMMETRY_ATOL * scale):
        raise NotSymmetric("matrix is not symmetric")
    return a


def eigen_extremes_spd(a, tol=POWER_TOL, max_iters=POWER_MAX_ITERS):
    """Smallest and largest eigenvalue of a symmetric positive-definite matrix.

    ``lambda_max`` comes from power iteration on ``a``; ``lambda_min`` from
    power iteration on ``lambda_max * I - a`` shifted back.
    """
    a = check_symmetric(a)
    n = a.shape[0]
    lam_max = _dominant(lambda v: a @ v, n, tol, max_iters, rayleigh=True)
    if lam_max <= 0.0:
        raise NotPositiveDefinite("largest eigenvalue estimate is not positive")
    shifted = lam_max * np.eye(n) - a
    if np.any(shifted):
        gap = _dominant(lambda v: shifted @ v, n, tol, max_iters, rayleigh=True)
    else:
        gap = 0.0
    lam_min = lam_max - gap
    if lam_min <= 0.0:
        raise NotPositiveDefinite(f"smallest eigenvalue estimate {lam_min:.3e} <= 0")
    return EigenExtremes(lambda_min=float(lam_min), lambda_max=float(lam_max))


def spectral_norm(a, tol=POWER_TOL, max_iters=POWER_MAX_ITERS):
    """Operator 2-norm ``sqrt(lambda_max(a^T a))`` of any rectangular matrix."""
    a = as_matrix(a)
    if not np.any(a):
        return 0.0
    top = _dominant(lambda v: a.T @ (a @ v), a.shape[1], tol, max_iters, rayleigh=True)
    return float(np.sqrt(max(top, 0.0)))
