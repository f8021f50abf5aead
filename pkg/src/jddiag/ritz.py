"""Rayleigh-Ritz extraction, basis rotation, and defectiveness testing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotAnEigenvalueError
from .linalg import as_matrix, as_vector, check_orthonormal, small_eig

__all__ = [
    "RitzPair",
    "ritz_pairs",
    "extract_ritz",
    "rotate_basis_first",
    "is_defective",
]

#: eigenvalues of a projected matrix within this relative radius of each
#: other are treated as one (multiple) eigenvalue
DEFECT_CLUSTER_REL = 1e-8

#: relative slack for "equidistant from target" in Ritz selection
_TIE_REL = 1e-12


@dataclass(eq=False)
class RitzPair:
    """One Ritz approximation drawn from a search basis.

    ``vector = V @ coeff`` has unit norm and its largest-magnitude entry is
    made real positive so golden-value comparisons are deterministic.
    ``residual = A @ vector - value * vector`` is orthogonal to the basis
    by construction (checked on extraction).
    """

    value: complex
    coeff: np.ndarray
    vector: np.ndarray
    residual: np.ndarray
    residual_norm: float = field(init=False)

    def __post_init__(self):
        self.residual_norm = float(np.linalg.norm(self.residual))


def _fix_phase(vector: np.ndarray):
    """Unimodular scalar that makes the largest-magnitude entry real positive."""
    idx = int(np.argmax(np.abs(vector)))
    pivot = vector[idx]
    if pivot == 0:
        return 1.0 + 0.0j
    return np.abs(pivot) / pivot


def ritz_pairs(a, v):
    """All Ritz pairs of ``a`` over the orthonormal basis ``v``.

    Returns ``(pairs, t)`` with ``t = v^H a v`` and pairs sorted like
    :func:`jddiag.linalg.small_eig`.
    """
    a = as_matrix(a, "a")
    v = check_orthonormal(v, name="v")
    if a.shape[0] != a.shape[1] or a.shape[0] != v.shape[0]:
        raise ValueError(f"shape mismatch: a {a.shape}, v {v.shape}")
    t = v.conj().T @ (a @ v)
    pairs = []
    for value, y in small_eig(t):
        u = v @ y
        phase = _fix_phase(u)
        u = u * phase
        y = y * phase
        r = a @ u - value * u
        pairs.append(RitzPair(value=value, coeff=y, vector=u, residual=r))
    return pairs, t


def extract_ritz(a, v, target: complex = 0.0):
    """Ritz pair of ``a`` over basis ``v`` nearest ``target``.

    Among eigenvalues equidistant from the target the pair with the smaller
    residual norm wins; remaining ties go to the smallest index.  Returns
    ``(pair, t)`` where ``t`` is the projected matrix ``v^H a v``.
    """
    pairs, t = ritz_pairs(a, v)
    dist = np.array([abs(p.value - target) for p in pairs])
    dmin = dist.min()
    slack = _TIE_REL * max(1.0, dmin)
    candidates = [p for p, d in zip(pairs, dist) if d <= dmin + slack]
    best = min(candidates, key=lambda p: p.residual_norm)
    anorm = np.linalg.norm(a)
    orth_defect = np.linalg.norm(v.conj().T @ best.residual)
    if orth_defect > 1e-10 * max(anorm, 1.0):
        raise NotAnEigenvalueError(
            f"Ritz residual is not orthogonal to the basis "
            f"(defect {orth_defect:.3e}); basis is likely corrupted"
        )
    return best, t


def rotate_basis_first(v, y):
    """Rotate an orthonormal basis so its first column becomes ``v @ y``.

    Uses a Householder reflection followed by a unimodular column scaling,
    so ``v_hat[:, 0] = v @ y`` holds exactly (no phase left over) and
    ``span(v_hat) = span(v)``.
    """
    v = check_orthonormal(v, name="v")
    y = as_vector(y, "y")
    k = v.shape[1]
    if y.size != k:
        raise ValueError(f"y has dimension {y.size}, expected {k}")
    nrm = np.linalg.norm(y)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"y must be unit norm, got ||y|| = {nrm}")
    y = y / nrm
    if k == 1:
        return v * y[0]
    sigma = y[0] / abs(y[0]) if abs(y[0]) > 0 else 1.0 + 0.0j
    w = y.copy()
    w[0] += sigma
    h = np.eye(k, dtype=np.complex128) - (2.0 / (w.conj() @ w)) * np.outer(w, w.conj())
    h[:, 0] *= -sigma
    return v @ h


def is_defective(t, lam: complex, cluster_rel: float = DEFECT_CLUSTER_REL):
    """Is ``lam`` a defective eigenvalue of ``t``?

    Compares the nullity of ``(t - lam I)^2`` against that of ``t - lam I``;
    strict growth means a second-order null vector exists and the eigenvalue
    is defective.  Returns ``(defective, (nullity1, nullity2))``.

    Numerical Jordan structure is ill-posed, so both nullities use a fixed
    cluster radius ``cluster_rel * ||t||`` as the singular-value cutoff
    rather than machine-precision rank tolerances.
    """
    t = as_matrix(t, "t")
    k = t.shape[0]
    if t.shape[1] != k:
        raise ValueError(f"t must be square, got shape {t.shape}")
    tnorm = np.linalg.norm(t, 2)
    radius = cluster_rel * max(tnorm, 1e-300)
    shifted = t - lam * np.eye(k)
    sigma = np.linalg.svd(shifted, compute_uv=False)
    if sigma[-1] > radius:
        raise NotAnEigenvalueError(
            f"{lam} is not an eigenvalue of the projected matrix "
            f"(sigma_min = {sigma[-1]:.3e}, radius = {radius:.3e})"
        )
    nullity1 = k - int(np.sum(sigma > radius))
    squared = shifted @ shifted
    sigma2 = np.linalg.svd(squared, compute_uv=False)
    cutoff2 = radius * max(float(sigma[0]), radius)
    nullity2 = k - int(np.sum(sigma2 > cutoff2))
    return nullity2 > nullity1, (nullity1, nullity2)
