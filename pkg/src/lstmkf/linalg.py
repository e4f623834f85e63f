"""Small dense linear algebra helpers for the Kalman-style trainers.

Everything works on plain float64 ndarrays, row-major. Matrices are
expected to be 2-D unless a function explicitly says it accepts a stack
(shape (..., n, n)); the stacked forms exist because the node-wise
trainers carry one small covariance block per node and update them in a
single batched call.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "NotPositiveDefiniteError",
    "as_matrix",
    "symmetrize",
    "is_symmetric",
    "trace",
    "spd_solve",
    "ensure_spd",
    "cholesky_ok",
]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A required Cholesky factorization failed, even after jitter repair."""


def as_matrix(a) -> np.ndarray:
    """Coerce to a float64 2-D array and reject non-finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValueError("matrix contains NaN or Inf entries")
    return m


def symmetrize(a: np.ndarray) -> np.ndarray:
    """(A + A^T)/2, also over stacks of square matrices."""
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def is_symmetric(a: np.ndarray, rtol: float = 1e-12) -> bool:
    """Entrywise |A - A^T| <= rtol * max(1, |A|)."""
    at = np.swapaxes(a, -1, -2)
    return bool(np.all(np.abs(a - at) <= rtol * np.maximum(1.0, np.abs(a))))


def trace(a: np.ndarray) -> np.ndarray | float:
    """Sum of the diagonal, batched over leading axes if present."""
    t = np.trace(a, axis1=-2, axis2=-1)
    return float(t) if np.ndim(t) == 0 else t


def cholesky_ok(a: np.ndarray) -> bool:
    """True when a (stack of) symmetric matrix factorizes as SPD."""
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


def spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A X = B for symmetric positive definite A via Cholesky.

    Raises NotPositiveDefiniteError when A does not factorize; callers
    that can tolerate a perturbed A should repair it with ensure_spd
    first and retry.
    """
    try:
        c = cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    return cho_solve(c, b, check_finite=False)


def ensure_spd(a: np.ndarray, jitter_start: float | None = None) -> np.ndarray:
    """Return a symmetrized, factorizable copy of a square matrix.

    The input is symmetrized, then eps*I is added with eps doubling from
    jitter_start until a Cholesky factorization succeeds. At most ten
    doublings are attempted; a matrix that is still not positive definite
    after that is genuinely indefinite and raises.

    The default jitter_start is 1e-12 * trace(a)/n, i.e. proportional to
    the mean eigenvalue, so a merely rounding-damaged covariance is
    repaired without materially perturbing it.
    """
    s = symmetrize(np.asarray(a, dtype=np.float64))
    if not np.isfinite(s).all():
        raise NotPositiveDefiniteError("matrix contains NaN or Inf entries")
    if cholesky_ok(s):
        return s
    n = s.shape[-1]
    if jitter_start is None:
        jitter_start = 1e-12 * max(float(np.trace(s)) / n, 1e-300)
    eye = np.eye(n)
    eps = jitter_start
    for _ in range(11):  # jitter_start * 2^k for k = 0..10
        if eps > 0.0 and cholesky_ok(s + eps * eye):
            return s + eps * eye
        eps *= 2.0
    raise NotPositiveDefiniteError(
        f"matrix not positive definite after jitter up to {eps / 2.0:g}"
    )
