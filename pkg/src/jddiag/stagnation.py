"""Stagnation predicates: does the correction vector enlarge the subspace?

Even when the correction equation has a unique solution ``v``, the outer
iteration stalls if ``v`` already lies in the search subspace.  This module
implements three equivalent ways of detecting that before (or without)
computing ``v``:

* the block null-space form, built from the partitioned inverse of the
  complement-projected operator;
* the span criterion, a least-squares membership test of the Ritz vector
  against ``(A - lam I) V``;
* direct membership of the solved correction vector.

Every report also carries the defectiveness flag of the projected matrix,
because stagnation implies the Ritz value is a defective eigenvalue of it
(the converse fails; one of the built-in gallery matrices is the witness).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correction import (
    Solvability,
    TwoSidedForm,
    classify_standard,
    classify_subspace,
    classify_two_sided,
)
from .errors import (
    InconsistentError,
    NotAnEigenvalueError,
    PathMismatchError,
    SingularMatrixError,
    SingularWitnessError,
    ZeroVectorError,
)
from .linalg import (
    DEFAULT_TOL,
    Tolerance,
    as_matrix,
    as_vector,
    check_orthonormal,
    in_range,
    lu_solve,
    orthonormal_complement,
)
from .ritz import is_defective, rotate_basis_first

__all__ = [
    "StagnationReport",
    "BlockDecomposition",
    "expansion_is_trivial",
    "stagnation_nullspace_form",
    "stagnation_predicate_standard",
    "stagnation_predicate_subspace",
    "stagnation_predicate_two_sided",
    "check_defectiveness_implication",
]


@dataclass(eq=False)
class StagnationReport:
    """Outcome of one stagnation test.

    ``predicate_value`` is the relative membership residual of the deciding
    test (small means "inside the span", i.e. stagnation for the direct
    forms).  ``nullities`` are the first- and second-order nullities behind
    the defectiveness flag.
    """

    stagnates: bool
    predicate_value: float
    method: str
    defective: bool
    nullities: tuple[int, int]
    rotated: bool = False


@dataclass(eq=False)
class BlockDecomposition:
    """Partitioned inverse of the complement-projected shifted operator.

    With ``[u, V2, V3]`` unitary (``u`` the Ritz vector, ``V2`` the rest of
    the search basis, ``V3`` its complement), the inverse of
    ``[V2, V3]^H (A - lam I) [V2, V3]`` splits into blocks ``b11`` through
    ``b22``; the operator ``V3 b22 V3^H`` annihilates the residual exactly
    when the method stagnates.
    """

    b11: np.ndarray
    b12: np.ndarray
    b21: np.ndarray
    b22: np.ndarray
    v2: np.ndarray
    v3: np.ndarray

    @property
    def null_form_matrix(self) -> np.ndarray:
        return self.v3 @ self.b22 @ self.v3.conj().T


def _defect_info(a, v, lam):
    t = v.conj().T @ (a @ v)
    try:
        defective, nullities = is_defective(t, lam)
    except NotAnEigenvalueError:
        defective, nullities = False, (0, 0)
    return defective, nullities, t


def _reject_converged(a, lam, u, tol):
    r = a @ u - lam * u
    scale = max(float(np.linalg.norm(a)), 1e-300)
    if np.linalg.norm(r) <= tol.membership_tol * scale:
        raise ZeroVectorError(
            "Ritz pair is converged; the stagnation predicates are "
            "degenerate for a (numerically) zero correction"
        )
    return r


def expansion_is_trivial(v, basis, tol: Tolerance = DEFAULT_TOL):
    """Does ``v`` already lie in the span of ``basis``?

    Returns ``(trivial, residual)`` with ``residual = ||v - B B^H v|| / ||v||``.
    """
    basis = check_orthonormal(basis, name="basis")
    v = as_vector(v, "v")
    nrm = np.linalg.norm(v)
    if nrm == 0.0:
        raise ZeroVectorError("cannot test span membership of the zero vector")
    defect = v - basis @ (basis.conj().T @ v)
    residual = float(np.linalg.norm(defect) / nrm)
    return residual <= tol.membership_tol, residual


def stagnation_nullspace_form(
    a, lam, v, r, tol: Tolerance = DEFAULT_TOL, coeff=None
):
    """Stagnation test through the partitioned-inverse block operator.

    ``v`` must have the Ritz vector as its first column; alternatively pass
    the Ritz coefficient vector as ``coeff`` and the basis is rotated here
    (the report records that).  Requires the standard correction equation
    to have a unique solution.  Returns ``(report, blocks)``.
    """
    a = as_matrix(a, "a")
    v = check_orthonormal(v, name="v")
    r = as_vector(r, "r")
    rotated = False
    if coeff is not None:
        coeff = as_vector(coeff, "coeff")
        if np.linalg.norm(coeff - np.eye(v.shape[1], 1).ravel()) > 1e-12:
            v = rotate_basis_first(v, coeff)
            rotated = True
    n, k = v.shape
    u = v[:, 0]
    rnorm = np.linalg.norm(r)
    if rnorm <= tol.membership_tol * max(float(np.linalg.norm(a)), 1e-300):
        raise ZeroVectorError(
            "residual is (numerically) zero; the Ritz pair is converged"
        )

    report = classify_standard(a, lam, u, tol)
    if report.classification is not Solvability.UNIQUE:
        raise InconsistentError(
            "the block null-space test assumes a unique correction; "
            f"classification was {report.classification.value}"
        )

    v2 = v[:, 1:]
    v3 = orthonormal_complement(v, tol)
    u_perp = np.hstack([v2, v3])
    shifted = a - lam * np.eye(n)
    m_perp = u_perp.conj().T @ (shifted @ u_perp)
    inverse = lu_solve(m_perp, np.eye(n - 1, dtype=np.complex128), tol)
    blocks = BlockDecomposition(
        b11=inverse[: k - 1, : k - 1],
        b12=inverse[: k - 1, k - 1 :],
        b21=inverse[k - 1 :, : k - 1],
        b22=inverse[k - 1 :, k - 1 :],
        v2=v2,
        v3=v3,
    )
    value = float(np.linalg.norm(blocks.null_form_matrix @ r) / rnorm)
    stagnates = value <= tol.membership_tol
    defective, nullities, _ = _defect_info(a, v, lam)
    return (
        StagnationReport(
            stagnates=stagnates,
            predicate_value=value,
            method="nullspace_block",
            defective=defective,
            nullities=nullities,
            rotated=rotated,
        ),
        blocks,
    )


def stagnation_predicate_standard(a, lam, v, u, tol: Tolerance = DEFAULT_TOL):
    """Computable span criterion for the standard correction equation.

    Stagnation happens exactly when the Ritz vector lies in
    ``span{(A - lam I) V}``; equivalently when ``(A - lam I)^{-1} u`` lies
    in ``span{V}``.  Both forms are evaluated and must agree.
    """
    a = as_matrix(a, "a")
    v = check_orthonormal(v, name="v")
    u = as_vector(u, "u")
    _reject_converged(a, lam, u, tol)
    report = classify_standard(a, lam, u, tol)
    if report.classification is not Solvability.UNIQUE:
        raise InconsistentError(
            "the span criterion assumes a unique correction; "
            f"classification was {report.classification.value}"
        )
    shifted = a - lam * np.eye(a.shape[0])
    member, abs_residual = in_range(shifted @ v, u, tol)
    value = float(abs_residual / np.linalg.norm(u))

    x = lu_solve(shifted, u, tol)
    alt_member, alt_value = expansion_is_trivial(x, v, tol)
    if member != alt_member:
        raise PathMismatchError(
            "the two equivalent span-criterion forms disagree: "
            f"range test {member} ({value:.3e}) vs inverse-membership "
            f"{alt_member} ({alt_value:.3e})"
        )
    defective, nullities, _ = _defect_info(a, v, lam)
    return StagnationReport(
        stagnates=member,
        predicate_value=value,
        method="span_criterion",
        defective=defective,
        nullities=nullities,
    )


def stagnation_predicate_subspace(a, lam, v, w, u, tol: Tolerance = DEFAULT_TOL):
    """Span criterion for the subspace-deflated correction equation.

    Tests whether ``g = W M^{-1} W^H u`` (with ``M = W^H (A-lam I)^{-1} W``)
    lies in ``span{(A - lam I) V}``.  A single-column ``w`` reduces to the
    standard predicate; ``w`` spanning all of ``v`` cannot stagnate and
    short-circuits to False.
    """
    a = as_matrix(a, "a")
    v = check_orthonormal(v, name="v")
    w = check_orthonormal(w, name="w")
    u = as_vector(u, "u")
    _reject_converged(a, lam, u, tol)
    report = classify_subspace(a, lam, w, u, tol)
    if report.classification is Solvability.NONE:
        raise InconsistentError("subspace correction equation has no solution")
    if report.classification is Solvability.INFINITE:
        raise SingularWitnessError(
            "witness matrix is singular; the subspace span criterion "
            "needs its inverse"
        )
    defective, nullities, _ = _defect_info(a, v, lam)

    if w.shape[1] == v.shape[1]:
        span_gap = np.linalg.norm(w @ w.conj().T - v @ v.conj().T)
        if span_gap <= 1e-10 * v.shape[0]:
            # full deflation: the correction is orthogonal to the whole
            # search subspace, so it can never fall inside it
            return StagnationReport(
                stagnates=False,
                predicate_value=1.0,
                method="subspace_span_criterion",
                defective=defective,
                nullities=nullities,
            )

    shifted = a - lam * np.eye(a.shape[0])
    x = lu_solve(shifted, w, tol)
    m = w.conj().T @ x
    g = w @ lu_solve(m, w.conj().T @ u, tol)
    member, abs_residual = in_range(shifted @ v, g, tol)
    value = float(abs_residual / np.linalg.norm(g))

    f = lu_solve(shifted, g, tol)
    alt_member, alt_value = expansion_is_trivial(f, v, tol)
    if member != alt_member:
        raise PathMismatchError(
            "the two equivalent subspace span-criterion forms disagree: "
            f"range test {member} ({value:.3e}) vs inverse-membership "
            f"{alt_member} ({alt_value:.3e})"
        )
    return StagnationReport(
        stagnates=member,
        predicate_value=value,
        method="subspace_span_criterion",
        defective=defective,
        nullities=nullities,
    )


def stagnation_predicate_two_sided(
    a,
    theta,
    q_basis,
    p_basis,
    which: TwoSidedForm,
    tol: Tolerance = DEFAULT_TOL,
    q=None,
    p=None,
):
    """Stagnation test for the two-sided correction equations.

    With ``x`` the shifted solve of the deflating vector (``(A - theta I)^{-1} q``
    for right forms, the conjugate system on ``p`` for left forms), the new
    direction stays inside its search subspace exactly when ``x`` equals its
    projection ``Pi x``, where ``Pi`` is the oblique projector ``Q P^H`` /
    ``P Q^H`` for the bi-orthonormal forms and the orthogonal projector
    ``Q Q^H`` / ``P P^H`` for the orthonormal forms.

    ``q`` and ``p`` are the current right/left approximations and default to
    the first basis columns (normalized); they must lie in their spans.
    """
    a = as_matrix(a, "a")
    q_basis = as_matrix(q_basis, "q_basis")
    p_basis = as_matrix(p_basis, "p_basis")
    if q_basis.shape != p_basis.shape:
        raise ValueError("q_basis and p_basis must have matching shapes")
    n = a.shape[0]
    k = q_basis.shape[1]
    bi = which in (TwoSidedForm.BI_RIGHT, TwoSidedForm.BI_LEFT)
    if bi:
        defect = np.linalg.norm(q_basis.conj().T @ p_basis - np.eye(k))
        if defect > 1e-8:
            raise ValueError(
                f"bases are not bi-orthonormal: ||Q^H P - I|| = {defect:.3e}"
            )
    else:
        check_orthonormal(q_basis, name="q_basis")
        check_orthonormal(p_basis, name="p_basis")

    q = q_basis[:, 0] if q is None else as_vector(q, "q")
    p = p_basis[:, 0] if p is None else as_vector(p, "p")
    q = q / np.linalg.norm(q)
    p = p / np.linalg.norm(p)
    for vec, basis, name in ((q, q_basis, "q"), (p, p_basis, "p")):
        gap = np.linalg.norm(vec - basis @ np.linalg.lstsq(basis, vec, rcond=None)[0])
        if gap > 1e-8:
            raise ValueError(f"{name} must lie in the span of its basis")
    report = classify_two_sided(a, theta, q, p, which, tol)
    if report.classification is not Solvability.UNIQUE:
        raise InconsistentError(
            "the two-sided predicate assumes a unique correction; "
            f"classification was {report.classification.value}"
        )

    shifted = a - theta * np.eye(n)
    if which in (TwoSidedForm.BI_RIGHT, TwoSidedForm.ORTH_RIGHT):
        x = lu_solve(shifted, q, tol)
    else:
        x = lu_solve(shifted.conj().T, p, tol)
    projector = {
        TwoSidedForm.BI_RIGHT: lambda y: q_basis @ (p_basis.conj().T @ y),
        TwoSidedForm.BI_LEFT: lambda y: p_basis @ (q_basis.conj().T @ y),
        TwoSidedForm.ORTH_RIGHT: lambda y: q_basis @ (q_basis.conj().T @ y),
        TwoSidedForm.ORTH_LEFT: lambda y: p_basis @ (p_basis.conj().T @ y),
    }[which]
    value = float(np.linalg.norm(x - projector(x)) / np.linalg.norm(x))
    stagnates = value <= tol.membership_tol

    # defectiveness of the oblique projection matrix (P^H Q)^{-1} P^H A Q,
    # which is P^H A Q itself for bi-orthonormal bases
    gram = p_basis.conj().T @ q_basis
    projected = p_basis.conj().T @ (a @ q_basis)
    try:
        t_eff = lu_solve(gram, projected, tol)
        defective, nullities = is_defective(t_eff, theta)
    except (NotAnEigenvalueError, SingularMatrixError):
        defective, nullities = False, (0, 0)
    return StagnationReport(
        stagnates=stagnates,
        predicate_value=value,
        method="two_sided_projector",
        defective=defective,
        nullities=nullities,
    )


def check_defectiveness_implication(
    report: StagnationReport, t, lam, cluster_rel: float | None = None
) -> bool:
    """Verify 'stagnation implies defective Ritz value' on one report.

    Returns ``True`` when the implication holds (vacuously when the report
    is non-stagnant).  Run after every diagnostic pass; a ``False`` here is
    a finding worth logging, not an input error.
    """
    if not report.stagnates:
        return True
    try:
        if cluster_rel is None:
            defective, _ = is_defective(t, lam)
        else:
            defective, _ = is_defective(t, lam, cluster_rel)
    except NotAnEigenvalueError:
        return False
    return defective
