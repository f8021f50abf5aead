"""Dense complex linear algebra with explicit tolerances.

Everything in this package works on plain ``numpy.ndarray`` objects in
complex double precision; real input is promoted on entry.  The helpers
here wrap LAPACK-backed routines (LU, SVD, dense eig) behind contracts
with scale-aware singularity thresholds, because the exact-arithmetic
tests downstream ("nonsingular", "= 0", "is in the range of") all need a
numerical interpretation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    EmptySpanError,
    NoConvergenceError,
    NotOrthonormalError,
    SingularMatrixError,
)

__all__ = [
    "EPS",
    "Tolerance",
    "as_matrix",
    "as_vector",
    "lu_solve",
    "orthonormalize",
    "orthonormal_complement",
    "small_eig",
    "rank_and_nullspace",
    "in_range",
]

EPS = float(np.finfo(np.complex128).eps)

#: environment variable that globally overrides the membership tolerance
MEMBERSHIP_TOL_ENV = "JD_DIAG_TOL"

_DEFAULT_MEMBERSHIP_TOL = 1e-10
_SMALL_EIG_CAP = 64


def _membership_tol_default() -> float:
    value = os.environ.get(MEMBERSHIP_TOL_ENV)
    if value is None:
        return _DEFAULT_MEMBERSHIP_TOL
    return float(value)


@dataclass(frozen=True)
class Tolerance:
    """Thresholds for rank decisions and subspace-membership tests.

    ``rank_rel`` is relative to the largest singular value of the matrix
    under test; ``None`` means the scale-aware default ``n * eps``.
    ``membership_tol`` is relative to the norm of the tested vector and
    can be overridden globally through the ``JD_DIAG_TOL`` environment
    variable.
    """

    rank_rel: float | None = None
    membership_tol: float | None = None

    def __post_init__(self):
        if self.rank_rel is not None and not self.rank_rel > 0.0:
            raise ValueError("rank_rel must be positive")
        if self.membership_tol is None:
            object.__setattr__(self, "membership_tol", _membership_tol_default())
        if not self.membership_tol > 0.0:
            raise ValueError("membership_tol must be positive")

    def rank_threshold(self, n: int, sigma_max: float) -> float:
        """Absolute singular-value cutoff for an ``n``-dimensional problem."""
        rel = self.rank_rel if self.rank_rel is not None else n * EPS
        return rel * max(sigma_max, 0.0)


DEFAULT_TOL = Tolerance()


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and promote a 2-d array to complex double precision."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be nonempty, got shape {m.shape}")
    if not (np.all(np.isfinite(m.real)) and np.all(np.isfinite(m.imag))):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Validate and promote a 1-d array to complex double precision."""
    x = np.asarray(v, dtype=np.complex128)
    if x.ndim == 2 and 1 in x.shape:
        x = x.reshape(-1)
    if x.ndim != 1 or x.size < 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {np.shape(v)}")
    if not (np.all(np.isfinite(x.real)) and np.all(np.isfinite(x.imag))):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def lu_solve(m, b, tol: Tolerance = DEFAULT_TOL):
    """Solve ``m @ x = b`` by LU with partial pivoting.

    ``b`` may be a vector or a matrix of right-hand sides; the result has
    the same shape.  Raises :class:`SingularMatrixError` when the smallest
    pivot falls below ``rank_rel`` relative to the largest one, which in
    this package usually means a shift collided with an eigenvalue.
    """
    m = as_matrix(m, "m")
    n = m.shape[0]
    if m.shape[1] != n:
        raise ValueError(f"m must be square, got shape {m.shape}")
    b_arr = np.asarray(b)
    vector_rhs = b_arr.ndim == 1
    rhs = as_vector(b, "b").reshape(-1, 1) if vector_rhs else as_matrix(b, "b")
    if rhs.shape[0] != n:
        raise ValueError(f"b has {rhs.shape[0]} rows, expected {n}")

    lu, piv = scipy.linalg.lu_factor(m, check_finite=False)
    pivots = np.abs(np.diag(lu))
    rel = tol.rank_rel if tol.rank_rel is not None else n * EPS
    if pivots.min() <= rel * max(pivots.max(), 1e-300):
        raise SingularMatrixError(
            f"matrix is singular to working precision "
            f"(min pivot {pivots.min():.3e}, max pivot {pivots.max():.3e})"
        )
    x = scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)
    return x[:, 0] if vector_rhs else x


def orthonormalize(columns, tol: Tolerance = DEFAULT_TOL):
    """Orthonormalize columns by twice-iterated classical Gram-Schmidt.

    Returns ``(q, dropped)`` where ``dropped`` lists the indices of input
    columns whose post-projection norm fell below the rank tolerance
    relative to their original norm.  Raises :class:`EmptySpanError` if
    nothing survives.
    """
    a = as_matrix(columns, "columns")
    n, k = a.shape
    if n < k:
        raise ValueError(f"need rows >= cols, got shape {a.shape}")
    rel = tol.rank_rel if tol.rank_rel is not None else n * EPS
    kept: list[np.ndarray] = []
    dropped: list[int] = []
    for j in range(k):
        v = a[:, j].copy()
        scale = np.linalg.norm(v)
        if scale == 0.0:
            dropped.append(j)
            continue
        for _ in range(2):
            for q in kept:
                v -= q * (q.conj() @ v)
        norm = np.linalg.norm(v)
        if norm <= rel * scale:
            dropped.append(j)
            continue
        kept.append(v / norm)
    if not kept:
        raise EmptySpanError("all columns were dropped during orthonormalization")
    return np.column_stack(kept), dropped


def check_orthonormal(u, rel: float = 100.0, name: str = "basis") -> np.ndarray:
    """Require ``u^H u = I`` within ``rel * n * eps`` and return ``u``."""
    u = as_matrix(u, name)
    n, k = u.shape
    defect = np.linalg.norm(u.conj().T @ u - np.eye(k))
    if defect > rel * n * EPS:
        raise NotOrthonormalError(
            f"{name} is not orthonormal: ||U^H U - I|| = {defect:.3e}"
        )
    return u


def orthonormal_complement(u, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Complete an orthonormal ``n x k`` basis to a unitary ``[u, u_perp]``.

    Implemented by orthonormalizing the columns of ``I - u u^H``, which
    for standard-basis input returns standard basis vectors and in general
    produces some unitary completion.
    """
    u = check_orthonormal(u, name="u")
    n, k = u.shape
    if k >= n:
        raise ValueError(f"basis already spans the full space (shape {u.shape})")
    proj = np.eye(n, dtype=np.complex128) - u @ u.conj().T
    comp, _ = orthonormalize(proj, tol)
    if comp.shape[1] != n - k:
        raise NotOrthonormalError(
            f"complement has {comp.shape[1]} columns, expected {n - k}"
        )
    return comp


def small_eig(t, cap: int = _SMALL_EIG_CAP):
    """All eigenpairs of a small dense matrix, eigenvectors unit-norm.

    Returns a list of ``(eigenvalue, eigenvector)`` tuples in ascending
    order of real part (ties by imaginary part) so output is deterministic.
    """
    t = as_matrix(t, "t")
    k = t.shape[0]
    if t.shape[1] != k:
        raise ValueError(f"t must be square, got shape {t.shape}")
    if k > cap:
        raise ValueError(f"matrix order {k} exceeds the small-eig cap {cap}")
    try:
        values, vectors = np.linalg.eig(t)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(f"dense eigensolver failed: {exc}") from exc
    order = np.lexsort((values.imag, values.real))
    pairs = []
    for i in order:
        vec = vectors[:, i]
        pairs.append((complex(values[i]), vec / np.linalg.norm(vec)))
    return pairs


def rank_and_nullspace(m, tol: Tolerance = DEFAULT_TOL):
    """Numerical rank and an orthonormal null-space basis, by SVD.

    The rank is the number of singular values above
    ``rank_rel * sigma_max``; the returned basis has ``cols - rank``
    columns (possibly zero).
    """
    m = as_matrix(m, "m")
    _, s, vh = np.linalg.svd(m)
    cutoff = tol.rank_threshold(max(m.shape), s[0] if s.size else 0.0)
    rank = int(np.sum(s > cutoff))
    nullspace = vh[rank:].conj().T
    return rank, nullspace


def in_range(m, b, tol: Tolerance = DEFAULT_TOL):
    """Least-squares membership test: is ``b`` in the range of ``m``?

    Returns ``(member, residual)`` where ``residual = min_x ||m x - b||``
    comes from a rank-revealing (SVD) least-squares solve and membership
    means ``residual <= membership_tol * ||b||``.
    """
    m = as_matrix(m, "m")
    b = as_vector(b, "b")
    if b.size != m.shape[0]:
        raise ValueError(f"b has dimension {b.size}, expected {m.shape[0]}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return True, 0.0
    rel = tol.rank_rel if tol.rank_rel is not None else max(m.shape) * EPS
    x = np.linalg.lstsq(m, b, rcond=rel)[0]
    residual = float(np.linalg.norm(m @ x - b))
    return residual <= tol.membership_tol * bnorm, residual
