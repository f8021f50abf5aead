"""Correction-equation solvability classification and direct solves.

The outer iteration expands its search subspace by solving a projected,
singular linear system.  Despite the folklore, that system is not always
consistent: each variant here has a cheap scalar or small-matrix witness
whose (non)vanishing decides between a unique solution, no solution, or
(for the subspace variant only) infinitely many.  The classifiers compute
that witness; the solvers return the solution through two independent
paths and cross-check them.

Variants, by the projector they deflate with:

* standard      -- ``(I - u u^H)(A - lam I)(I - u u^H) v = -r``, ``v ⊥ u``
* subspace      -- same with ``W W^H`` in place of ``u u^H``, ``u ∈ span W``
* two-sided     -- oblique/orthogonal rank-one deflations built from a
  right/left vector pair ``(q, p)``; four forms (right/left equation for
  bi-orthonormal and orthonormal bases)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import (
    BiorthBreakdownError,
    InconsistentError,
    NotUniqueError,
    PathMismatchError,
    SingularMatrixError,
    SingularShiftError,
)
from .linalg import (
    DEFAULT_TOL,
    EPS,
    Tolerance,
    as_matrix,
    as_vector,
    check_orthonormal,
    in_range,
    lu_solve,
    orthonormal_complement,
)

__all__ = [
    "Solvability",
    "FengJiaClass",
    "TwoSidedForm",
    "SolvabilityReport",
    "classify_standard",
    "classify_subspace",
    "classify_two_sided",
    "classify_feng_jia_oracle",
    "solve_standard",
    "solve_subspace",
    "solve_two_sided",
    "apply_projected_preconditioner",
]

#: |q^H p| below this (relative to the norms) is a bi-orthogonality breakdown
BIORTH_BREAKDOWN_REL = 1e-12

_PATH_FAIL_TOL = 1e-8


class Solvability(enum.Enum):
    """Solution count of a projected correction equation."""

    UNIQUE = "unique"
    NONE = "none"
    INFINITE = "infinite"


class FengJiaClass(enum.Enum):
    """Coarser classification from the range/spectrum test on the
    complement system (it cannot distinguish 'infinite' from 'one')."""

    NO_SOLUTION = "no_solution"
    AT_LEAST_ONE = "at_least_one"
    UNIQUE = "unique"


class TwoSidedForm(enum.Enum):
    """Which of the four two-sided correction equations is meant."""

    BI_RIGHT = "bi_right"
    BI_LEFT = "bi_left"
    ORTH_RIGHT = "orth_right"
    ORTH_LEFT = "orth_left"


@dataclass(eq=False)
class SolvabilityReport:
    """Classification of one correction equation plus its justification.

    ``witness`` is the deciding scalar (or the small witness matrix for the
    subspace variant, in which case ``sigma_min`` carries its smallest
    singular value and ``range_residual`` the membership residual of the
    no-solution/infinite split).  ``threshold`` records the cutoff the
    decision used, making reports auditable.
    """

    classification: Solvability
    witness: complex | np.ndarray
    threshold: float
    sigma_min: float | None = None
    range_residual: float | None = None

    def __post_init__(self):
        if self.classification is Solvability.INFINITE and np.isscalar(self.witness):
            raise ValueError(
                "only the subspace variant can have infinitely many solutions"
            )

    @property
    def witness_magnitude(self) -> float:
        if np.isscalar(self.witness):
            return abs(self.witness)
        return float(self.sigma_min)


def _shifted(a, shift):
    a = as_matrix(a, "a")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"a must be square, got shape {a.shape}")
    return a - shift * np.eye(n), n


def _solve_shifted(shifted, rhs, tol):
    try:
        return lu_solve(shifted, rhs, tol)
    except SingularMatrixError as exc:
        raise SingularShiftError(
            "shift is numerically an eigenvalue of the operator; "
            "the solvability classification assumes it is not"
        ) from exc


def _unit(v, name):
    v = as_vector(v, name)
    nrm = np.linalg.norm(v)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError(f"{name} must be unit norm, got ||{name}|| = {nrm}")
    return v / nrm


def classify_standard(a, lam, u, tol: Tolerance = DEFAULT_TOL) -> SolvabilityReport:
    """Classify the rank-one deflated correction equation at ``(lam, u)``.

    The witness is ``s = u^H (A - lam I)^{-1} u``; the equation has a unique
    solution exactly when ``s != 0`` and no solution otherwise (it can never
    have infinitely many).  The zero test is relative to the natural size of
    the projected vector: ``|s| <= membership_tol * max(1, ||x||)`` with
    ``x = (A - lam I)^{-1} u`` declares zero.
    """
    shifted, _ = _shifted(a, lam)
    u = _unit(u, "u")
    if u.size != shifted.shape[0]:
        raise ValueError(f"u has dimension {u.size}, expected {shifted.shape[0]}")
    x = _solve_shifted(shifted, u, tol)
    witness = complex(u.conj() @ x)
    threshold = tol.membership_tol * max(1.0, float(np.linalg.norm(x)))
    if abs(witness) > threshold:
        classification = Solvability.UNIQUE
    else:
        classification = Solvability.NONE
    return SolvabilityReport(
        classification=classification, witness=witness, threshold=threshold
    )


def classify_subspace(a, lam, w, u, tol: Tolerance = DEFAULT_TOL) -> SolvabilityReport:
    """Classify the subspace-deflated correction equation.

    ``w`` is an orthonormal basis with ``u`` in its span.  The witness is
    the small matrix ``M = W^H (A - lam I)^{-1} W``: nonsingular means a
    unique solution; singular splits on whether ``z = W^H u`` lies in the
    range of ``M`` (infinitely many solutions) or not (none).

    Singularity of ``M`` is judged against the natural size of the solved
    columns ``X = (A - lam I)^{-1} W`` (not against ``M`` itself), so a
    single-column ``w`` reproduces :func:`classify_standard` verbatim.
    """
    shifted, n = _shifted(a, lam)
    w = check_orthonormal(w, name="w")
    u = _unit(u, "u")
    if w.shape[0] != n or u.size != n:
        raise ValueError("dimension mismatch between a, w and u")
    membership = np.linalg.norm(w @ (w.conj().T @ u) - u)
    if membership > 1e-8:
        raise ValueError(
            f"u must lie in span(w); projection residual {membership:.3e}"
        )
    x = _solve_shifted(shifted, w, tol)
    m = w.conj().T @ x
    sigma = np.linalg.svd(m, compute_uv=False)
    threshold = tol.membership_tol * max(1.0, float(np.linalg.norm(x, 2)))
    sigma_min = float(sigma[-1])
    if sigma_min > threshold:
        return SolvabilityReport(
            classification=Solvability.UNIQUE,
            witness=m,
            threshold=threshold,
            sigma_min=sigma_min,
        )
    z = w.conj().T @ u
    member, residual = in_range(m, z, tol)
    classification = Solvability.INFINITE if member else Solvability.NONE
    return SolvabilityReport(
        classification=classification,
        witness=m,
        threshold=threshold,
        sigma_min=sigma_min,
        range_residual=residual,
    )


def classify_two_sided(
    a, theta, q, p, which: TwoSidedForm, tol: Tolerance = DEFAULT_TOL
) -> SolvabilityReport:
    """Classify one of the four two-sided correction equations.

    Witnesses, with ``B = A - theta I`` and ``B* = A^H - conj(theta) I``:

    * ``BI_RIGHT``:   ``p^H B^{-1} q``
    * ``BI_LEFT``:    ``q^H B*^{-1} p``  (conjugate of the right witness)
    * ``ORTH_RIGHT``: ``q^H B^{-1} q``
    * ``ORTH_LEFT``:  ``p^H B*^{-1} p``

    Only the witness is evaluated here, so degenerate pairs (for example
    ``q ⊥ p``) still classify; the solvers are the ones that need the
    deflating projectors to exist.
    """
    shifted, n = _shifted(a, theta)
    q = _unit(q, "q")
    p = _unit(p, "p")
    if q.size != n or p.size != n:
        raise ValueError("dimension mismatch between a, q and p")
    conj_shifted = shifted.conj().T
    if which is TwoSidedForm.BI_RIGHT:
        x = _solve_shifted(shifted, q, tol)
        witness = complex(p.conj() @ x)
    elif which is TwoSidedForm.BI_LEFT:
        x = _solve_shifted(conj_shifted, p, tol)
        witness = complex(q.conj() @ x)
    elif which is TwoSidedForm.ORTH_RIGHT:
        x = _solve_shifted(shifted, q, tol)
        witness = complex(q.conj() @ x)
    elif which is TwoSidedForm.ORTH_LEFT:
        x = _solve_shifted(conj_shifted, p, tol)
        witness = complex(p.conj() @ x)
    else:
        raise ValueError(f"unknown two-sided form: {which!r}")
    threshold = tol.membership_tol * max(1.0, float(np.linalg.norm(x)))
    classification = Solvability.UNIQUE if abs(witness) > threshold else Solvability.NONE
    return SolvabilityReport(
        classification=classification, witness=witness, threshold=threshold
    )


@dataclass(eq=False)
class FengJiaReport:
    """Outcome of the range/spectrum test on the complement system."""

    classification: FengJiaClass
    complement_matrix: np.ndarray
    rhs: np.ndarray
    sigma_min: float
    range_residual: float


def classify_feng_jia_oracle(
    a, rho, u, tol: Tolerance = DEFAULT_TOL
) -> FengJiaReport:
    """Independent solvability test working on the explicit complement.

    Builds a unitary completion ``[u, U]``, forms the complement operator
    ``M = U^H A U - rho I`` and the coordinates ``b = U^H r`` of the
    residual ``r = (A - rho I) u``, then decides by rank and range:
    no solution if ``b`` is outside the range of ``M``; unique if ``M`` is
    nonsingular; otherwise at least one solution exists.

    Unlike the witness classifiers this test stays meaningful when ``rho``
    is an eigenvalue of ``A``, where 'at least one' can genuinely mean
    'infinitely many'; callers log that region instead of asserting.
    """
    a = as_matrix(a, "a")
    u = _unit(u, "u")
    if a.shape[0] != a.shape[1] or u.size != a.shape[0]:
        raise ValueError("dimension mismatch between a and u")
    u_perp = orthonormal_complement(u.reshape(-1, 1), tol)
    r = a @ u - rho * u
    b = u_perp.conj().T @ r
    m = u_perp.conj().T @ (a @ u_perp) - rho * np.eye(u_perp.shape[1])
    sigma = np.linalg.svd(m, compute_uv=False)
    threshold = tol.rank_threshold(m.shape[0], float(sigma[0])) if sigma[0] > 0 else 0.0
    member, residual = in_range(m, b, tol)
    if not member:
        classification = FengJiaClass.NO_SOLUTION
    elif sigma[-1] > threshold:
        classification = FengJiaClass.UNIQUE
    else:
        classification = FengJiaClass.AT_LEAST_ONE
    return FengJiaReport(
        classification=classification,
        complement_matrix=m,
        rhs=b,
        sigma_min=float(sigma[-1]),
        range_residual=residual,
    )


def _orthogonality_check(vec, against, name, where):
    overlap = abs(complex(against.conj() @ vec))
    scale = max(float(np.linalg.norm(vec)), 1e-300)
    if overlap > 1e-8 * scale:
        raise ValueError(f"{name} must be orthogonal to {where}; overlap {overlap:.3e}")


def solve_standard(a, lam, u, r, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Solve the rank-one deflated correction equation for ``v ⊥ u``.

    Two independent paths must agree: (a) the complement path, solving the
    dense system restricted to an explicit orthonormal complement of ``u``;
    (b) the closed form ``v = -(A - lam I)^{-1} r + alpha (A - lam I)^{-1} u``
    with ``alpha`` chosen to enforce ``u^H v = 0``.  Disagreement beyond
    1e-8 raises :class:`PathMismatchError` (a self-check failure, not an
    input error).
    """
    shifted, n = _shifted(a, lam)
    u = _unit(u, "u")
    r = as_vector(r, "r")
    if u.size != n or r.size != n:
        raise ValueError("dimension mismatch between a, u and r")
    _orthogonality_check(r, u, "r", "u")

    report = classify_standard(a, lam, u, tol)
    if report.classification is not Solvability.UNIQUE:
        raise InconsistentError(
            f"correction equation has no solution "
            f"(witness {report.witness:.3e} below threshold {report.threshold:.3e})"
        )

    # (a) complement path
    u_perp = orthonormal_complement(u.reshape(-1, 1), tol)
    m_perp = u_perp.conj().T @ (shifted @ u_perp)
    w = _solve_shifted(m_perp, -(u_perp.conj().T @ r), tol)
    v_complement = u_perp @ w

    # (b) closed form
    x_r = _solve_shifted(shifted, r, tol)
    x_u = _solve_shifted(shifted, u, tol)
    alpha = (u.conj() @ x_r) / (u.conj() @ x_u)
    v_closed = -x_r + alpha * x_u

    scale = max(np.linalg.norm(v_complement), np.linalg.norm(v_closed), 1e-300)
    gap = np.linalg.norm(v_complement - v_closed) / scale
    if gap > _PATH_FAIL_TOL:
        raise PathMismatchError(
            f"complement and closed-form solutions disagree: relative gap {gap:.3e}"
        )
    return v_complement


def solve_subspace(
    a, lam, w, r, tol: Tolerance = DEFAULT_TOL, mode: str = "strict"
) -> np.ndarray:
    """Solve the subspace-deflated correction equation for ``v ⊥ span(w)``.

    ``mode='strict'`` requires a unique solution.  ``mode='minnorm'``
    additionally accepts the infinite case and returns the minimum-norm
    solution of the complement system via the pseudo-inverse.
    """
    if mode not in ("strict", "minnorm"):
        raise ValueError(f"mode must be 'strict' or 'minnorm', got {mode!r}")
    shifted, n = _shifted(a, lam)
    w = check_orthonormal(w, name="w")
    r = as_vector(r, "r")
    if w.shape[0] != n or r.size != n:
        raise ValueError("dimension mismatch between a, w and r")
    overlap = np.linalg.norm(w.conj().T @ r)
    if overlap > 1e-8 * max(np.linalg.norm(r), 1e-300):
        raise ValueError(f"r must be orthogonal to span(w); overlap {overlap:.3e}")

    u_perp = orthonormal_complement(w, tol)
    c = u_perp.conj().T @ (shifted @ u_perp)
    rhs = -(u_perp.conj().T @ r)
    sigma = np.linalg.svd(c, compute_uv=False)
    threshold = tol.rank_threshold(c.shape[0], float(sigma[0])) if sigma[0] > 0 else 0.0
    if sigma[-1] > threshold:
        return u_perp @ _solve_shifted(c, rhs, tol)

    member, residual = in_range(c, rhs, tol)
    if not member:
        raise InconsistentError(
            f"correction equation has no solution (range residual {residual:.3e})"
        )
    if mode == "strict":
        raise NotUniqueError(
            "correction equation has infinitely many solutions; "
            "use mode='minnorm' for a representative"
        )
    rel = tol.rank_rel if tol.rank_rel is not None else c.shape[0] * EPS
    w_min = np.linalg.lstsq(c, rhs, rcond=rel)[0]
    return u_perp @ w_min


def _two_sided_system(a, theta, q, p, which: TwoSidedForm):
    """Operator pieces of one two-sided equation.

    Returns ``(op, left_proj, right_proj, sol_orth)`` where the equation is
    ``left_proj @ op @ right_proj @ x = -r`` with the side constraint
    ``x ⊥ sol_orth``; ``op`` is the shifted matrix (``A - theta I`` for
    right forms, its conjugate transpose for left forms).
    """
    shifted, n = _shifted(a, theta)
    eye = np.eye(n, dtype=np.complex128)
    pq = complex(p.conj() @ q)
    if abs(pq) < BIORTH_BREAKDOWN_REL:
        raise BiorthBreakdownError(
            f"|p^H q| = {abs(pq):.3e}; the oblique projector does not exist"
        )
    oblique_q = eye - np.outer(q, p.conj()) / pq
    oblique_p = eye - np.outer(p, q.conj()) / np.conj(pq)
    if which is TwoSidedForm.BI_RIGHT:
        return shifted, oblique_q, oblique_q, p
    if which is TwoSidedForm.BI_LEFT:
        return shifted.conj().T, oblique_p, oblique_p, q
    if which is TwoSidedForm.ORTH_RIGHT:
        return shifted, oblique_q, eye - np.outer(q, q.conj()), q
    if which is TwoSidedForm.ORTH_LEFT:
        return shifted.conj().T, oblique_p, eye - np.outer(p, p.conj()), p
    raise ValueError(f"unknown two-sided form: {which!r}")


def solve_two_sided(
    a, theta, q, p, which: TwoSidedForm, r, tol: Tolerance = DEFAULT_TOL
) -> np.ndarray:
    """Solve one two-sided correction equation by its closed form.

    Right forms solve in ``A - theta I``, left forms in its conjugate
    transpose; the free scalar multiple of the deflating direction is fixed
    by the side constraint (``s ⊥ p``, ``t ⊥ q``, ``s ⊥ q``, ``t ⊥ p`` for
    the four forms respectively).  The result is substituted back into the
    full projected equation as a self-check.
    """
    q = _unit(q, "q")
    p = _unit(p, "p")
    r = as_vector(r, "r")
    report = classify_two_sided(a, theta, q, p, which, tol)
    if report.classification is not Solvability.UNIQUE:
        raise InconsistentError(
            f"two-sided correction equation {which.value} has no solution "
            f"(witness {report.witness:.3e})"
        )
    op, left_proj, right_proj, orth_against = _two_sided_system(a, theta, q, p, which)
    if r.size != op.shape[0]:
        raise ValueError(f"r has dimension {r.size}, expected {op.shape[0]}")

    if which in (TwoSidedForm.BI_RIGHT, TwoSidedForm.ORTH_RIGHT):
        deflate = q
    else:
        deflate = p
    # rhs must lie in the range of the left projector
    rhs_orth = {
        TwoSidedForm.BI_RIGHT: p,
        TwoSidedForm.BI_LEFT: q,
        TwoSidedForm.ORTH_RIGHT: p,
        TwoSidedForm.ORTH_LEFT: q,
    }[which]
    _orthogonality_check(r, rhs_orth, "r", "the equation's left deflation vector")

    x_r = _solve_shifted(op, r, tol)
    x_d = _solve_shifted(op, deflate, tol)
    beta = (orth_against.conj() @ x_r) / (orth_against.conj() @ x_d)
    solution = -x_r + beta * x_d

    residual = left_proj @ (op @ (right_proj @ solution)) + r
    scale = max(float(np.linalg.norm(r)), 1e-300)
    if np.linalg.norm(residual) > _PATH_FAIL_TOL * scale:
        raise PathMismatchError(
            f"two-sided solution fails substitution: "
            f"relative residual {np.linalg.norm(residual) / scale:.3e}"
        )
    return solution


def apply_projected_preconditioner(
    k, u, y, tol: Tolerance = DEFAULT_TOL
) -> np.ndarray:
    """Apply the deflated inverse of a preconditioner.

    Solves ``(I - u u^H) K (I - u u^H) z = (I - u u^H) y`` for ``z ⊥ u``
    through the closed form ``z = K^{-1} y_hat - (u^H K^{-1} y_hat /
    u^H K^{-1} u) K^{-1} u``.  The same witness logic as the standard
    classification applies with ``K`` in the operator seat, so a vanishing
    ``u^H K^{-1} u`` means the deflated system is inconsistent.
    """
    k = as_matrix(k, "k")
    u = _unit(u, "u")
    y = as_vector(y, "y")
    n = k.shape[0]
    if k.shape[1] != n or u.size != n or y.size != n:
        raise ValueError("dimension mismatch between k, u and y")
    y_hat = y - u * (u.conj() @ y)
    x_u = lu_solve(k, u, tol)
    witness = complex(u.conj() @ x_u)
    threshold = tol.membership_tol * max(1.0, float(np.linalg.norm(x_u)))
    if abs(witness) <= threshold:
        raise InconsistentError(
            f"deflated preconditioner system is inconsistent "
            f"(witness {witness:.3e} below threshold {threshold:.3e})"
        )
    x_y = lu_solve(k, y_hat, tol)
    z = x_y - (u.conj() @ x_y) / witness * x_u
    return z
