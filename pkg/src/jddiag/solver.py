"""Outer Jacobi-Davidson iterations with diagnostics-gated expansion.

Both the one-sided and the two-sided loop classify every correction
equation before solving it, run the stagnation predicates on solvable
ones, and fall back to residual expansion whenever the correction vector
would not (or could not) enlarge the search subspace.  Every iteration
leaves a trace record, so irregular convergence can be diagnosed after
the fact instead of being shrugged at.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .correction import (
    Solvability,
    TwoSidedForm,
    classify_standard,
    classify_subspace,
    classify_two_sided,
    solve_standard,
    solve_subspace,
    solve_two_sided,
)
from .errors import (
    BiorthBreakdownError,
    FallbackExhaustedError,
    InconsistentError,
    MaxIterationsError,
    NotUniqueError,
    PathMismatchError,
    SingularShiftError,
    SingularWitnessError,
    ZeroVectorError,
)
from .linalg import DEFAULT_TOL, Tolerance, as_matrix, as_vector
from .ritz import ritz_pairs
from .stagnation import (
    expansion_is_trivial,
    stagnation_predicate_standard,
    stagnation_predicate_subspace,
    stagnation_predicate_two_sided,
)

__all__ = [
    "ExpansionVariant",
    "FallbackPolicy",
    "Action",
    "SolverConfig",
    "IterationRecord",
    "JDResult",
    "TwoSidedResult",
    "jd_solve",
    "jd_solve_two_sided",
]

_EXPANSION_DROP_REL = 1e-12
_BREAKDOWN_REL = 1e-12


class ExpansionVariant(enum.Enum):
    """Which correction equation drives the subspace expansion."""

    STANDARD = "standard"
    SUBSPACE = "subspace"
    FULL_SUBSPACE = "full-subspace"
    BI = "bi"
    ORTH = "orth"


class FallbackPolicy(enum.Enum):
    RESIDUAL = "residual"
    ABORT = "abort"


class Action(enum.Enum):
    """What one outer iteration did to the search subspace."""

    CORRECTION_VECTOR = "correction_vector"
    RESIDUAL_VECTOR = "residual_vector"
    RESTART = "restart"
    CONVERGED = "converged"
    FAILED = "failed"


@dataclass
class SolverConfig:
    """Knobs of the outer iteration.

    ``conv_tol`` is relative to the spectral norm of the operator;
    ``m_max`` is the basis size that triggers a thick restart down to
    ``restart_keep`` directions.
    """

    target: complex = 0.0
    conv_tol: float = 1e-10
    max_outer: int = 200
    m_max: int = 20
    restart_keep: int = 3
    variant: ExpansionVariant = ExpansionVariant.STANDARD
    fallback: FallbackPolicy = FallbackPolicy.RESIDUAL
    tol: Tolerance = field(default_factory=Tolerance)

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = ExpansionVariant(self.variant)
        if isinstance(self.fallback, str):
            self.fallback = FallbackPolicy(self.fallback)
        if not (1 <= self.restart_keep < self.m_max):
            raise ValueError("need 1 <= restart_keep < m_max")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if not self.conv_tol > 0.0:
            raise ValueError("conv_tol must be positive")


@dataclass
class IterationRecord:
    """One row of the iteration trace.

    For two-sided runs the unsuffixed diagnostic fields describe the right
    correction equation and the ``*_left`` fields the left one; ``action``
    is the net effect on the bases (``residual_vector`` as soon as either
    side fell back).
    """

    k: int
    ritz_value: complex
    residual_norm: float
    action: Action
    solvability: str | None = None
    witness_magnitude: float | None = None
    stagnates: bool | None = None
    stagnation_residual: float | None = None
    defective: bool | None = None
    solvability_left: str | None = None
    witness_magnitude_left: float | None = None
    stagnates_left: bool | None = None
    stagnation_residual_left: float | None = None
    residual_norm_left: float | None = None
    notes: tuple[str, ...] = ()


@dataclass
class JDResult:
    value: complex
    vector: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    trace: list[IterationRecord]


@dataclass
class TwoSidedResult:
    value: complex
    right_vector: np.ndarray
    left_vector: np.ndarray
    residual_norm_right: float
    residual_norm_left: float
    converged: bool
    iterations: int
    trace: list[IterationRecord]


def _gram_schmidt_twice(basis, w):
    """Project ``w`` against the columns of ``basis`` (twice); returns the
    normalized remainder or ``None`` if it collapsed."""
    scale = np.linalg.norm(w)
    if scale == 0.0:
        return None
    v = w.copy()
    for _ in range(2):
        v = v - basis @ (basis.conj().T @ v)
    nrm = np.linalg.norm(v)
    if nrm <= _EXPANSION_DROP_REL * scale:
        return None
    return v / nrm


def _select_nearest(pairs, target):
    """Index of the pair nearest ``target``; ties by residual, then index."""
    dist = np.array([abs(p.value - target) for p in pairs])
    dmin = dist.min()
    slack = 1e-12 * max(1.0, dmin)
    best, best_res = None, np.inf
    for i, (p, d) in enumerate(zip(pairs, dist)):
        if d <= dmin + slack and p.residual_norm < best_res:
            best, best_res = i, p.residual_norm
    return best


def _schur_restart(v, t, target, keep):
    """Compress ``v`` onto an invariant subspace of ``t`` holding the
    ``keep`` Ritz values nearest ``target`` (more on ties)."""
    k = t.shape[0]
    keep = min(keep, k - 1)
    values = np.linalg.eigvals(t)
    cutoff = np.sort(np.abs(values - target))[keep - 1]
    _, z, sdim = scipy.linalg.schur(
        t, output="complex", sort=lambda lam: abs(lam - target) <= cutoff * (1 + 1e-12)
    )
    keep_eff = max(1, min(sdim, k - 1))
    return v @ z[:, :keep_eff]


def _subspace_w(v, pairs, selected):
    """Deflation basis for the 'subspace' variant: the selected Ritz vector
    plus the next-nearest one, orthonormalized."""
    u = pairs[selected].vector
    if len(pairs) == 1:
        return u.reshape(-1, 1)
    others = [p for i, p in enumerate(pairs) if i != selected]
    second = min(others, key=lambda p: abs(p.value - pairs[selected].value))
    w2 = _gram_schmidt_twice(u.reshape(-1, 1), second.vector)
    if w2 is None:
        return u.reshape(-1, 1)
    return np.column_stack([u, w2])


def jd_solve(a, v0, cfg: SolverConfig):
    """One-sided Jacobi-Davidson iteration toward ``cfg.target``.

    Expands with the solution of the configured correction equation when it
    exists and does not stagnate, otherwise with the projected residual
    (``fallback='residual'``) or not at all (``'abort'``).  Returns a
    :class:`JDResult`; raises :class:`MaxIterationsError` (carrying the
    partial result) when the iteration cap is hit.
    """
    a = as_matrix(a, "a")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"a must be square, got shape {a.shape}")
    if cfg.variant not in (
        ExpansionVariant.STANDARD,
        ExpansionVariant.SUBSPACE,
        ExpansionVariant.FULL_SUBSPACE,
    ):
        raise ValueError(f"jd_solve does not handle variant {cfg.variant.value!r}")
    v0 = as_vector(v0, "v0")
    if v0.size != n:
        raise ValueError(f"v0 has dimension {v0.size}, expected {n}")
    nrm = np.linalg.norm(v0)
    if nrm == 0.0:
        raise ZeroVectorError("starting vector must be nonzero")
    norm_a = max(float(np.linalg.norm(a, 2)), 1e-300)
    m_max = min(cfg.m_max, n)
    if n > 1 and cfg.restart_keep >= m_max:
        raise ValueError(f"restart_keep {cfg.restart_keep} must be < m_max {m_max}")

    basis = (v0 / nrm).reshape(-1, 1)
    trace: list[IterationRecord] = []

    def result(pair, converged):
        return JDResult(
            value=pair.value,
            vector=pair.vector,
            residual_norm=pair.residual_norm,
            converged=converged,
            iterations=len(trace),
            trace=trace,
        )

    pair = None
    for _ in range(cfg.max_outer):
        pairs, t = ritz_pairs(a, basis)
        selected = _select_nearest(pairs, cfg.target)
        pair = pairs[selected]
        k = basis.shape[1]
        rec = IterationRecord(
            k=k,
            ritz_value=pair.value,
            residual_norm=pair.residual_norm,
            action=Action.FAILED,
        )
        trace.append(rec)

        if pair.residual_norm <= cfg.conv_tol * norm_a:
            rec.action = Action.CONVERGED
            return result(pair, True)

        # classify the configured correction equation (always logged)
        report = None
        w_basis = None
        try:
            if cfg.variant is ExpansionVariant.STANDARD:
                report = classify_standard(a, pair.value, pair.vector, cfg.tol)
            else:
                w_basis = (
                    basis
                    if cfg.variant is ExpansionVariant.FULL_SUBSPACE
                    else _subspace_w(basis, pairs, selected)
                )
                report = classify_subspace(
                    a, pair.value, w_basis, pair.vector, cfg.tol
                )
            rec.solvability = report.classification.value
            rec.witness_magnitude = report.witness_magnitude
        except SingularShiftError as exc:
            rec.solvability = "singular_shift"
            rec.notes += (str(exc),)

        if k >= m_max:
            basis = _schur_restart(basis, t, cfg.target, cfg.restart_keep)
            rec.action = Action.RESTART
            continue

        candidate = None
        if report is not None and report.classification is not Solvability.NONE:
            try:
                if cfg.variant is ExpansionVariant.STANDARD:
                    v = solve_standard(a, pair.value, pair.vector, pair.residual, cfg.tol)
                    stag = stagnation_predicate_standard(
                        a, pair.value, basis, pair.vector, cfg.tol
                    )
                else:
                    v = solve_subspace(
                        a, pair.value, w_basis, pair.residual, cfg.tol, mode="minnorm"
                    )
                    stag = stagnation_predicate_subspace(
                        a, pair.value, basis, w_basis, pair.vector, cfg.tol
                    )
                rec.stagnates = stag.stagnates
                rec.stagnation_residual = stag.predicate_value
                rec.defective = stag.defective
                trivial, _ = expansion_is_trivial(v, basis, cfg.tol)
                if trivial != stag.stagnates:
                    rec.notes += (
                        "stagnation predicate and direct membership disagree",
                    )
                if not (stag.stagnates or trivial):
                    candidate = _gram_schmidt_twice(basis, v)
            except (
                InconsistentError,
                NotUniqueError,
                SingularWitnessError,
                SingularShiftError,
                PathMismatchError,
                ZeroVectorError,
            ) as exc:
                rec.notes += (f"correction solve unavailable: {exc}",)

        if candidate is not None:
            basis = np.hstack([basis, candidate.reshape(-1, 1)])
            rec.action = Action.CORRECTION_VECTOR
            continue

        if cfg.fallback is FallbackPolicy.ABORT:
            rec.action = Action.FAILED
            raise MaxIterationsError(
                "expansion aborted: correction equation unusable and fallback "
                "disabled",
                result=result(pair, False),
            )
        fallback_dir = _gram_schmidt_twice(basis, pair.residual)
        if fallback_dir is None:
            rec.action = Action.FAILED
            raise FallbackExhaustedError(
                "projected residual lies in the search subspace; cannot expand",
                result=result(pair, False),
            )
        basis = np.hstack([basis, fallback_dir.reshape(-1, 1)])
        rec.action = Action.RESIDUAL_VECTOR

    raise MaxIterationsError(
        f"no convergence within {cfg.max_outer} outer iterations",
        result=result(pair, False),
    )


# ---------------------------------------------------------------------------
# two-sided iteration


def _biorth_append(q_basis, p_basis, q_new, p_new):
    """Append a bi-orthogonalized pair; returns the new bases or ``None``
    if either direction collapsed or the pair broke down."""
    q_scale = np.linalg.norm(q_new)
    p_scale = np.linalg.norm(p_new)
    if q_scale == 0.0 or p_scale == 0.0:
        return None
    q = q_new.copy()
    p = p_new.copy()
    for _ in range(2):
        q = q - q_basis @ (p_basis.conj().T @ q)
        p = p - p_basis @ (q_basis.conj().T @ p)
    qn = np.linalg.norm(q)
    pn = np.linalg.norm(p)
    if qn <= _EXPANSION_DROP_REL * q_scale or pn <= _EXPANSION_DROP_REL * p_scale:
        return None
    q = q / qn
    overlap = complex(p.conj() @ q)
    if abs(overlap) <= _BREAKDOWN_REL * np.linalg.norm(p):
        raise BiorthBreakdownError(
            "new left/right directions are numerically orthogonal"
        )
    p = p / np.conj(overlap)
    return (
        np.hstack([q_basis, q.reshape(-1, 1)]),
        np.hstack([p_basis, p.reshape(-1, 1)]),
    )


def _orth_append(q_basis, p_basis, q_new, p_new):
    q = _gram_schmidt_twice(q_basis, q_new)
    p = _gram_schmidt_twice(p_basis, p_new)
    if q is None or p is None:
        return None
    return (
        np.hstack([q_basis, q.reshape(-1, 1)]),
        np.hstack([p_basis, p.reshape(-1, 1)]),
    )


def _two_sided_extract(a, q_basis, p_basis, bi, target):
    """Petrov-Galerkin extraction from the pencil ``(P^H A Q, P^H Q)``.

    Returns ``(theta, y, z, q, p, r_q, r_p)`` for the eigenvalue nearest
    the target (ties by right-residual norm).
    """
    g = p_basis.conj().T @ (a @ q_basis)
    if bi:
        values, vl, vr = scipy.linalg.eig(g, left=True, right=True)
    else:
        s = p_basis.conj().T @ q_basis
        values, vl, vr = scipy.linalg.eig(g, s, left=True, right=True)
    finite = np.isfinite(values)
    if not finite.any():
        raise BiorthBreakdownError(
            "projected pencil has no finite eigenvalues; the bases have "
            "become mutually blind"
        )
    candidates = []
    for i in np.flatnonzero(finite):
        theta = complex(values[i])
        y = vr[:, i]
        q = q_basis @ y
        qn = np.linalg.norm(q)
        if qn == 0.0:
            continue
        pivot = q[int(np.argmax(np.abs(q)))]
        phase = abs(pivot) / pivot
        q = q * phase / qn
        y = y * phase / qn
        z = vl[:, i]
        p = p_basis @ z
        pq = complex(p.conj() @ q)
        if abs(pq) <= _BREAKDOWN_REL * np.linalg.norm(p):
            continue
        if bi:
            p = p / np.conj(pq)  # q^H p = 1
        else:
            p = p / np.linalg.norm(p)
        r_q = a @ q - theta * q
        candidates.append((theta, y, z, q, p, r_q))
    if not candidates:
        raise BiorthBreakdownError(
            "every projected eigenvector pair is numerically degenerate"
        )
    dist = np.array([abs(c[0] - target) for c in candidates])
    dmin = dist.min()
    slack = 1e-12 * max(1.0, dmin)
    best = min(
        (c for c, d in zip(candidates, dist) if d <= dmin + slack),
        key=lambda c: np.linalg.norm(c[5]),
    )
    theta, y, z, q, p, r_q = best
    r_p = a.conj().T @ p - np.conj(theta) * p
    return theta, y, z, q, p, r_q, r_p


def jd_solve_two_sided(a, q0, p0, cfg: SolverConfig):
    """Two-sided Jacobi-Davidson iteration for an eigentriple.

    Maintains a right basis for approximating eigenvectors of ``A`` and a
    left basis for those of ``A^H`` (bi-orthonormal for the ``bi`` variant,
    separately orthonormal for ``orth``), expands both per iteration, and
    converges when both residuals pass the relative tolerance.
    """
    a = as_matrix(a, "a")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"a must be square, got shape {a.shape}")
    if cfg.variant not in (ExpansionVariant.BI, ExpansionVariant.ORTH):
        raise ValueError(
            f"jd_solve_two_sided needs variant 'bi' or 'orth', "
            f"got {cfg.variant.value!r}"
        )
    bi = cfg.variant is ExpansionVariant.BI
    q0 = as_vector(q0, "q0")
    p0 = as_vector(p0, "p0")
    if q0.size != n or p0.size != n:
        raise ValueError("starting vectors must match the operator dimension")
    if np.linalg.norm(q0) == 0.0 or np.linalg.norm(p0) == 0.0:
        raise ZeroVectorError("starting vectors must be nonzero")
    overlap = complex(p0.conj() @ q0)
    if abs(overlap) <= _BREAKDOWN_REL * np.linalg.norm(p0) * np.linalg.norm(q0):
        raise BiorthBreakdownError("starting vectors are numerically orthogonal")

    q = q0 / np.linalg.norm(q0)
    if bi:
        p = p0 / np.conj(complex(p0.conj() @ q))
    else:
        p = p0 / np.linalg.norm(p0)
    q_basis = q.reshape(-1, 1)
    p_basis = p.reshape(-1, 1)

    norm_a = max(float(np.linalg.norm(a, 2)), 1e-300)
    m_max = min(cfg.m_max, n)
    right_form = TwoSidedForm.BI_RIGHT if bi else TwoSidedForm.ORTH_RIGHT
    left_form = TwoSidedForm.BI_LEFT if bi else TwoSidedForm.ORTH_LEFT
    trace: list[IterationRecord] = []

    def result(theta, q, p, rqn, rpn, converged):
        return TwoSidedResult(
            value=theta,
            right_vector=q,
            left_vector=p,
            residual_norm_right=rqn,
            residual_norm_left=rpn,
            converged=converged,
            iterations=len(trace),
            trace=trace,
        )

    state = None
    for _ in range(cfg.max_outer):
        theta, y, z, q, p, r_q, r_p = _two_sided_extract(
            a, q_basis, p_basis, bi, cfg.target
        )
        rqn = float(np.linalg.norm(r_q))
        rpn = float(np.linalg.norm(r_p))
        state = (theta, q, p, rqn, rpn)
        k = q_basis.shape[1]
        rec = IterationRecord(
            k=k,
            ritz_value=theta,
            residual_norm=rqn,
            residual_norm_left=rpn,
            action=Action.FAILED,
        )
        trace.append(rec)

        if max(rqn, rpn) <= cfg.conv_tol * norm_a:
            rec.action = Action.CONVERGED
            return result(theta, q, p, rqn, rpn, True)

        qu = q / np.linalg.norm(q)
        pu = p / np.linalg.norm(p)
        rep_r = rep_l = None
        try:
            rep_r = classify_two_sided(a, theta, qu, pu, right_form, cfg.tol)
            rep_l = classify_two_sided(a, theta, qu, pu, left_form, cfg.tol)
            rec.solvability = rep_r.classification.value
            rec.witness_magnitude = rep_r.witness_magnitude
            rec.solvability_left = rep_l.classification.value
            rec.witness_magnitude_left = rep_l.witness_magnitude
        except SingularShiftError as exc:
            rec.solvability = "singular_shift"
            rec.solvability_left = "singular_shift"
            rec.notes += (str(exc),)

        if k >= m_max:
            q_basis, p_basis = _two_sided_restart(
                a, q_basis, p_basis, bi, cfg.target, cfg.restart_keep
            )
            rec.action = Action.RESTART
            continue

        new_q = None
        new_p = None
        if rep_r.classification is Solvability.UNIQUE:
            try:
                s_vec = solve_two_sided(a, theta, qu, pu, right_form, r_q, cfg.tol)
                stag = stagnation_predicate_two_sided(
                    a, theta, q_basis, p_basis, right_form, cfg.tol, q=qu, p=pu
                )
                rec.stagnates = stag.stagnates
                rec.stagnation_residual = stag.predicate_value
                rec.defective = stag.defective
                trivial, _ = expansion_is_trivial_oblique(
                    s_vec, q_basis, p_basis, right_form, cfg.tol
                )
                if not (stag.stagnates or trivial):
                    new_q = s_vec
            except (InconsistentError, PathMismatchError, SingularShiftError) as exc:
                rec.notes += (f"right correction unavailable: {exc}",)
        if rep_l.classification is Solvability.UNIQUE:
            try:
                t_vec = solve_two_sided(a, theta, qu, pu, left_form, r_p, cfg.tol)
                stag_l = stagnation_predicate_two_sided(
                    a, theta, q_basis, p_basis, left_form, cfg.tol, q=qu, p=pu
                )
                rec.stagnates_left = stag_l.stagnates
                rec.stagnation_residual_left = stag_l.predicate_value
                trivial_l, _ = expansion_is_trivial_oblique(
                    t_vec, q_basis, p_basis, left_form, cfg.tol
                )
                if not (stag_l.stagnates or trivial_l):
                    new_p = t_vec
            except (InconsistentError, PathMismatchError, SingularShiftError) as exc:
                rec.notes += (f"left correction unavailable: {exc}",)

        fell_back = False
        if new_q is None:
            new_q = r_q
            fell_back = True
        if new_p is None:
            new_p = r_p
            fell_back = True
        if cfg.fallback is FallbackPolicy.ABORT and fell_back:
            rec.action = Action.FAILED
            raise MaxIterationsError(
                "expansion aborted: a correction equation was unusable and "
                "fallback is disabled",
                result=result(theta, q, p, rqn, rpn, False),
            )
        append = _biorth_append if bi else _orth_append
        expanded = append(q_basis, p_basis, new_q, new_p)
        if expanded is None and not fell_back:
            expanded = append(q_basis, p_basis, r_q, r_p)
            fell_back = True
        if expanded is None:
            rec.action = Action.FAILED
            raise FallbackExhaustedError(
                "neither correction nor residual directions can expand the "
                "bases",
                result=result(theta, q, p, rqn, rpn, False),
            )
        q_basis, p_basis = expanded
        rec.action = Action.RESIDUAL_VECTOR if fell_back else Action.CORRECTION_VECTOR

    theta, q, p, rqn, rpn = state
    raise MaxIterationsError(
        f"no convergence within {cfg.max_outer} outer iterations",
        result=result(theta, q, p, rqn, rpn, False),
    )


def expansion_is_trivial_oblique(vec, q_basis, p_basis, which, tol):
    """Span-membership of a prospective expansion vector in the basis it
    would join, using that basis's own projector."""
    if which in (TwoSidedForm.BI_RIGHT, TwoSidedForm.ORTH_RIGHT):
        basis = q_basis
    else:
        basis = p_basis
    nrm = np.linalg.norm(vec)
    if nrm == 0.0:
        return True, 0.0
    lsq = np.linalg.lstsq(basis, vec, rcond=None)[0]
    residual = float(np.linalg.norm(vec - basis @ lsq) / nrm)
    return residual <= tol.membership_tol, residual


def _two_sided_restart(a, q_basis, p_basis, bi, target, keep):
    """Compress both bases onto the ``keep`` Petrov-Galerkin triples
    nearest the target, then re-(bi)orthonormalize."""
    k = q_basis.shape[1]
    keep = max(1, min(keep, k - 1))
    g = p_basis.conj().T @ (a @ q_basis)
    if bi:
        values, vl, vr = scipy.linalg.eig(g, left=True, right=True)
    else:
        s = p_basis.conj().T @ q_basis
        values, vl, vr = scipy.linalg.eig(g, s, left=True, right=True)
    finite = np.flatnonzero(np.isfinite(values))
    order = finite[np.argsort(np.abs(values[finite] - target), kind="stable")]
    new_q = None
    new_p = None
    for i in order:
        qi = q_basis @ vr[:, i]
        pi = p_basis @ vl[:, i]
        if new_q is None:
            qn = np.linalg.norm(qi)
            pn = np.linalg.norm(pi)
            if qn == 0.0 or pn == 0.0:
                continue
            qi = qi / qn
            overlap = complex(pi.conj() @ qi)
            if abs(overlap) <= _BREAKDOWN_REL * pn:
                continue
            pi = pi / np.conj(overlap) if bi else pi / pn
            new_q = qi.reshape(-1, 1)
            new_p = pi.reshape(-1, 1)
        else:
            append = _biorth_append if bi else _orth_append
            try:
                expanded = append(new_q, new_p, qi, pi)
            except BiorthBreakdownError:
                continue
            if expanded is not None:
                new_q, new_p = expanded
        if new_q is not None and new_q.shape[1] >= keep:
            break
    if new_q is None:
        raise BiorthBreakdownError("restart could not retain any eigentriple")
    return new_q, new_p
