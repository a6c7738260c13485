"""Convex optimisation backend.

Linear programs go to HiGHS (through scipy), linear matrix inequalities go
to the CVXOPT interior-point solver, and the maximum-volume inscribed
ellipsoid is a log-det program solved by Clarabel through cvxpy.  Every solve
returns a :class:`SolveOutcome`; solver failures are reported through its
status rather than raised.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import clarabel
import cvxopt
import cvxopt.solvers
import cvxpy as cp
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.special import gammaln

LP_TOL = 1e-8
SDP_TOL = 1e-7
MVE_TOL = 1e-7
EPS_STRICT = 1e-6

class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_TROUBLE = "numerical_trouble"


@dataclass
class SolveOutcome:
    status: Status
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    tolerance: Optional[float] = None
    info: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def unit_ball_log_volume(d: int) -> float:
    """log γ_d, the log-volume of the unit d-ball."""
    return 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)


# ---------------------------------------------------------------------------
# linear programs


@dataclass
class LinearProgram:
    """maximize cᵀx s.t. G x ≥ h, E x = d, lb ≤ x ≤ ub."""

    c: np.ndarray
    G: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    E: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    bounds: Optional[Sequence[Tuple[Optional[float], Optional[float]]]] = None


def solve_lp(lp: LinearProgram, tolerance: float = LP_TOL) -> SolveOutcome:
    c = np.asarray(lp.c, dtype=float)
    n = c.size
    A_ub = None if lp.G is None else -np.atleast_2d(np.asarray(lp.G, dtype=float))
    b_ub = None if lp.h is None else -np.asarray(lp.h, dtype=float)
    A_eq = None if lp.E is None else np.atleast_2d(np.asarray(lp.E, dtype=float))
    b_eq = None if lp.d is None else np.asarray(lp.d, dtype=float)
    bounds = lp.bounds if lp.bounds is not None else [(None, None)] * n
    try:
        res = linprog(
            -c,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=bounds,
            method="highs",
            options={"primal_feasibility_tolerance": tolerance, "dual_feasibility_tolerance": tolerance},
        )
    except ValueError as exc:
        return SolveOutcome(Status.NUMERICAL_TROUBLE, info={"message": str(exc)})
    if res.status == 2:
        return SolveOutcome(Status.INFEASIBLE, info={"message": res.message})
    if res.status == 3:
        return SolveOutcome(Status.UNBOUNDED, info={"message": res.message})
    if res.status != 0:
        return SolveOutcome(Status.NUMERICAL_TROUBLE, info={"message": res.message})
    x = res.x
    primal = float(c @ x)
    # weak duality: the HiGHS multipliers give a dual bound on the minimisation of −cᵀx
    dual = 0.0
    if A_ub is not None:
        dual += float(res.ineqlin.marginals @ b_ub)
    if A_eq is not None:
        dual += float(res.eqlin.marginals @ b_eq)
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds], dtype=float)
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds], dtype=float)
    ml, mu = res.lower.marginals, res.upper.marginals
    dual += float(np.sum(np.where(np.isfinite(lo), ml * np.where(np.isfinite(lo), lo, 0.0), 0.0)))
    dual += float(np.sum(np.where(np.isfinite(hi), mu * np.where(np.isfinite(hi), hi, 0.0), 0.0)))
    gap = abs(-dual - primal)
    scale = 1.0 + abs(primal)
    if gap > 1e3 * tolerance * scale:
        return SolveOutcome(Status.NUMERICAL_TROUBLE, x, primal, gap, {"message": "duality gap not closed"})
    return SolveOutcome(Status.OPTIMAL, x, primal, gap)


# ---------------------------------------------------------------------------
# semidefinite programs


def svec_indices(s: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the upper triangle, taken column by column."""
    rows, cols = [], []
    for j in range(s):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def _clarabel_settings(tolerance: float) -> "clarabel.DefaultSettings":
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.tol_gap_abs = tolerance
    st.tol_gap_rel = tolerance
    st.tol_feas = tolerance
    st.tol_infeas_abs = tolerance
    st.tol_infeas_rel = tolerance
    st.max_iter = 300
    return st


def _status(sol) -> Status:
    name = str(sol.status)
    if name in ("Solved", "AlmostSolved"):
        return Status.OPTIMAL
    if name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return Status.INFEASIBLE
    if name in ("DualInfeasible", "AlmostDualInfeasible"):
        return Status.UNBOUNDED
    return Status.NUMERICAL_TROUBLE


@dataclass
class LMIProgram:
    """maximize cᵀx s.t. E x = e, G x ≥ h, and F_k x + f_k ⪰ 0 for each block.

    ``blocks`` holds triples ``(side, F, f)``.  Row r of F (and entry r of f)
    is the matrix entry at the r-th position of the upper triangle taken
    column by column, i.e. (0,0), (0,1), (1,1), (0,2), ... without scaling.
    """

    c: np.ndarray
    E: Optional[sp.spmatrix] = None
    e: Optional[np.ndarray] = None
    G: Optional[sp.spmatrix] = None
    h: Optional[np.ndarray] = None
    blocks: List[Tuple[int, sp.spmatrix, np.ndarray]] = field(default_factory=list)


_EXPAND: dict = {}


def _triangle_to_full(side: int) -> sp.csr_matrix:
    """Sparse map from upper-triangle entries to the column-major full vec."""
    if side not in _EXPAND:
        r, c = svec_indices(side)
        k = np.arange(r.size)
        rows = np.concatenate([r + c * side, c + r * side])
        cols = np.concatenate([k, k])
        off = np.concatenate([np.ones(r.size, bool), r != c])
        _EXPAND[side] = sp.csr_matrix(
            (np.ones(off.sum()), (rows[off], cols[off])), shape=(side * side, r.size)
        )
    return _EXPAND[side]


def _affine_param(E, e, nv) -> Tuple[np.ndarray, np.ndarray]:
    """(x_p, N) with {x | E x = e} = {x_p + N z}."""
    if E is None or E.shape[0] == 0:
        return np.zeros(nv), np.eye(nv)
    Ed = E.toarray() if sp.issparse(E) else np.asarray(E, dtype=float)
    U, s, Vt = np.linalg.svd(Ed, full_matrices=True)
    tol = max(Ed.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0) * 10
    rank = int(np.sum(s > tol))
    xp = Vt[:rank].T @ ((U[:, :rank].T @ np.asarray(e, dtype=float)) / s[:rank])
    if np.linalg.norm(Ed @ xp - e) > 1e-8 * (1 + np.linalg.norm(e)):
        raise ValueError("inconsistent equality constraints")
    return xp, Vt[rank:].T


def solve_lmi(prog: LMIProgram, tolerance: float = SDP_TOL) -> SolveOutcome:
    """Interior-point solve (CVXOPT) after eliminating the equality constraints."""
    c = np.asarray(prog.c, dtype=float)
    nv = c.size
    try:
        xp, N = _affine_param(prog.E, prog.e, nv)
    except ValueError as exc:
        return SolveOutcome(Status.INFEASIBLE, info={"message": str(exc)})
    lin = None
    if prog.G is not None and prog.G.shape[0]:
        G = sp.csr_matrix(prog.G)
        lin = (G @ N, np.asarray(prog.h, dtype=float) - G @ xp)
    mats = []
    for side, F, f in prog.blocks:
        X = _triangle_to_full(side)
        Ff = X @ sp.csr_matrix(F)
        mats.append((side, Ff @ N, X @ np.asarray(f, dtype=float) + Ff @ xp))
    # directions of z seen by no constraint: the program is unbounded along
    # them if the objective moves, and otherwise they are dropped
    K = sum(P.T @ P for _, P, _ in mats)
    if lin is not None:
        K = K + lin[0].T @ lin[0]
    w, Q = np.linalg.eigh(K)
    seen = w > 1e-10 * max(w.max(initial=0.0), 1.0)
    cz_full = N.T @ c
    if np.linalg.norm(Q[:, ~seen].T @ cz_full) > 1e-9 * (1 + np.linalg.norm(cz_full)):
        return SolveOutcome(Status.UNBOUNDED, info={"message": "objective moves along an unconstrained direction"})
    R = Q[:, seen]
    N = N @ R
    Gl = hl = None
    if lin is not None:
        Gl = cvxopt.matrix(-(lin[0] @ R))
        hl = cvxopt.matrix(-lin[1])
    Gs, hs = [], []
    for side, P, h0 in mats:
        Gs.append(cvxopt.matrix(-(P @ R)))
        hs.append(cvxopt.matrix(h0.reshape(side, side)))
    cz = cvxopt.matrix(-(R.T @ cz_full))
    opts = {"show_progress": False, "abstol": tolerance, "reltol": tolerance * 10, "feastol": tolerance,
            "maxiters": 100}
    try:
        sol = cvxopt.solvers.sdp(cz, Gl=Gl, hl=hl, Gs=Gs, hs=hs, options=opts)
    except (ValueError, ArithmeticError) as exc:
        return SolveOutcome(Status.NUMERICAL_TROUBLE, info={"message": str(exc)})
    status = sol["status"]
    info = {"solver_status": status, "iterations": sol.get("iterations")}
    if status == "optimal":
        x = xp + N @ np.array(sol["x"]).ravel()
        return SolveOutcome(Status.OPTIMAL, x, float(c @ x), tolerance, info)
    if status == "primal infeasible":
        return SolveOutcome(Status.INFEASIBLE, info=info)
    if status == "dual infeasible":
        return SolveOutcome(Status.UNBOUNDED, info=info)
    if sol.get("x") is not None:
        x = xp + N @ np.array(sol["x"]).ravel()
        if np.all(np.isfinite(x)):
            info["objective_estimate"] = float(c @ x)
            info["x_estimate"] = x
    return SolveOutcome(Status.NUMERICAL_TROUBLE, info=info)


@dataclass
class SemidefiniteProgram:
    """maximize ⟨C, Z⟩ s.t. ⟨A_k, Z⟩ (=, ≤, ≥) b_k and Z ⪰ Z_base."""

    C: np.ndarray
    constraints: List[Tuple[np.ndarray, str, float]] = field(default_factory=list)
    Z_base: Optional[np.ndarray] = None

    @property
    def side(self) -> int:
        return self.C.shape[0]


def _triangle(M: np.ndarray, pair_weight: float = 1.0) -> np.ndarray:
    s = M.shape[0]
    r, c = svec_indices(s)
    return M[r, c] * np.where(r == c, 1.0, pair_weight)


def solve_sdp(prog: SemidefiniteProgram, tolerance: float = SDP_TOL) -> SolveOutcome:
    """Solve over the upper-triangle entries of Z; the solution is returned as a full matrix."""
    s = prog.side
    nv = s * (s + 1) // 2
    # ⟨M, Z⟩ counts each off-diagonal pair twice
    c = _triangle(np.asarray(prog.C, dtype=float), 2.0)
    E_rows, e_vals, G_rows, h_vals = [], [], [], []
    for M, sense, val in prog.constraints:
        row = _triangle(np.asarray(M, dtype=float), 2.0)
        if sense == "==":
            E_rows.append(row)
            e_vals.append(val)
        elif sense == ">=":
            G_rows.append(row)
            h_vals.append(val)
        elif sense == "<=":
            G_rows.append(-row)
            h_vals.append(-val)
        else:
            raise ValueError(f"unknown constraint sense {sense!r}")
    base = np.zeros((s, s)) if prog.Z_base is None else np.asarray(prog.Z_base, dtype=float)
    lmi = LMIProgram(
        c=c,
        E=sp.csr_matrix(np.array(E_rows).reshape(-1, nv)) if E_rows else None,
        e=np.array(e_vals) if E_rows else None,
        G=sp.csr_matrix(np.array(G_rows).reshape(-1, nv)) if G_rows else None,
        h=np.array(h_vals) if G_rows else None,
        blocks=[(s, sp.identity(nv, format="csr"), -_triangle(base))],
    )
    out = solve_lmi(lmi, tolerance)
    if out.x is not None:
        r, cc = svec_indices(s)
        Z = np.zeros((s, s))
        Z[r, cc] = out.x
        Z[cc, r] = out.x
        out.x = Z
    return out


# ---------------------------------------------------------------------------
# polytope centres


def _rows(A, b) -> Tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    return A, b


def chebyshev_center(A, b, tolerance: float = LP_TOL) -> Tuple[SolveOutcome, Optional[np.ndarray], float]:
    """Centre and radius of the largest ball inside ``{z | A z ≥ b}``."""
    A, b = _rows(A, b)
    d = A.shape[1]
    norms = np.linalg.norm(A, axis=1)
    G = np.hstack([A, -norms[:, None]])
    c = np.zeros(d + 1)
    c[-1] = 1.0
    out = solve_lp(LinearProgram(c, G, b, bounds=[(None, None)] * d + [(0, None)]), tolerance)
    if not out.ok:
        return out, None, 0.0
    return out, out.x[:d], float(out.x[d])


def analytic_center(A, b, start: Optional[np.ndarray] = None, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Minimiser of −Σ log(a_iᵀz − b_i) by damped Newton from a strictly interior start."""
    A, b = _rows(A, b)
    if start is None:
        out, start, radius = chebyshev_center(A, b)
        if start is None or radius <= 0:
            raise ValueError("region has empty interior")
    z = np.asarray(start, dtype=float).copy()
    slack = A @ z - b
    if np.any(slack <= 0):
        raise ValueError("analytic centre needs a strictly interior start")

    def phi(zz):
        s = A @ zz - b
        return np.inf if np.any(s <= 0) else -np.sum(np.log(s))

    for _ in range(max_iter):
        s = A @ z - b
        w = 1.0 / s
        g = -A.T @ w
        H = (A * (w ** 2)[:, None]).T @ A
        step = np.linalg.solve(H, -g)
        dec = float(-g @ step)
        if dec / 2 <= tol:
            break
        t = 1.0
        f0 = phi(z)
        while phi(z + t * step) > f0 + 0.25 * t * float(g @ step):
            t *= 0.5
            if t < 1e-14:
                break
        z = z + t * step
    return z


def max_volume_ellipsoid(
    A,
    b,
    *,
    anchor: Optional[np.ndarray] = None,
    frame: Optional[np.ndarray] = None,
    tolerance: float = MVE_TOL,
) -> Tuple[SolveOutcome, Optional[np.ndarray], Optional[np.ndarray]]:
    """Largest ellipsoid ``{center + shape·v : ‖v‖ ≤ 1}`` inside ``{z | A z ≥ b}``.

    ``anchor`` and ``frame`` describe an affine change of variables
    z = anchor + frame·v in which the program is posed; passing the previous
    ellipsoid keeps the problem well scaled as the region shrinks.
    """
    A, b = _rows(A, b)
    d = A.shape[1]
    if anchor is None:
        anchor = np.zeros(d)
    if frame is None:
        frame = np.eye(d)
    At = A @ frame
    bt = b - A @ anchor
    # normalise rows so that the conic constraints are comparably scaled
    nrm = np.linalg.norm(At, axis=1)
    keep = nrm > 1e-14
    if np.any(~keep) and np.any(bt[~keep] > 0):
        return SolveOutcome(Status.INFEASIBLE, info={"message": "zero row with positive bound"}), None, None
    At, bt = At[keep] / nrm[keep, None], bt[keep] / nrm[keep]
    B = cp.Variable((d, d), PSD=True)
    c = cp.Variable(d)
    cons = [cp.norm(B @ At[i], 2) <= At[i] @ c - bt[i] for i in range(At.shape[0])]
    prob = cp.Problem(cp.Maximize(cp.log_det(B)), cons)
    try:
        prob.solve(
            solver=cp.CLARABEL,
            tol_gap_abs=tolerance * 1e-2,
            tol_gap_rel=tolerance * 1e-2,
            tol_feas=tolerance * 1e-2,
        )
    except cp.error.SolverError as exc:
        return SolveOutcome(Status.NUMERICAL_TROUBLE, info={"message": str(exc)}), None, None
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SolveOutcome(Status.INFEASIBLE), None, None
    if prob.status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        return SolveOutcome(Status.UNBOUNDED), None, None
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or B.value is None:
        return SolveOutcome(Status.NUMERICAL_TROUBLE, info={"message": prob.status}), None, None
    Bv = 0.5 * (B.value + B.value.T)
    M = frame @ Bv
    w, U = np.linalg.eigh(M @ M.T)
    shape = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T
    center = anchor + frame @ c.value
    # the reported ellipsoid must sit inside the closed region; pull it in by the residual if needed
    A_n = A / np.linalg.norm(A, axis=1, keepdims=True)
    b_n = b / np.linalg.norm(A, axis=1)
    slack = A_n @ center - np.linalg.norm(shape @ A_n.T, axis=0) - b_n
    if slack.min() < 0:
        worst = -slack.min()
        radius = np.linalg.norm(shape @ A_n.T, axis=0)
        shrink = np.min(np.where(radius > 0, (A_n @ center - b_n) / np.maximum(radius, 1e-300), np.inf))
        if not shrink > 0:
            return SolveOutcome(Status.NUMERICAL_TROUBLE, info={"message": "centre outside region"}), None, None
        shape = shape * min(1.0, shrink * (1 - 1e-12))
        if worst > 1e3 * tolerance:
            status = Status.NUMERICAL_TROUBLE
            return SolveOutcome(status, info={"message": f"inscribed residual {worst:.2e}"}), center, shape
    sign, logdet = np.linalg.slogdet(shape)
    out = SolveOutcome(
        Status.OPTIMAL,
        center,
        float(logdet) if sign > 0 else -np.inf,
        tolerance,
        {"solver_status": prob.status},
    )
    return out, center, shape


def project_onto_polytope(A, b, v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{u | A u ≥ b}`` (a small QP)."""
    A, b = _rows(A, b)
    v = np.asarray(v, dtype=float)
    if np.all(A @ v >= b):
        return v.copy()
    m = v.size
    P = sp.identity(m, format="csc")
    st = _clarabel_settings(1e-10)
    sol = clarabel.DefaultSolver(P, -v, sp.csc_matrix(-A), -b, [clarabel.NonnegativeConeT(A.shape[0])], st).solve()
    if _status(sol) is not Status.OPTIMAL:
        raise RuntimeError(f"projection onto input polytope failed: {sol.status}")
    u = np.array(sol.x)
    # tighten onto the feasible side; the QP tolerance is looser than the 1e-9 contract
    viol = b - A @ u
    if viol.max() > 0:
        out, _, _ = solve_lp_feasible_point(A, b, u)
        u = out
    return u


def solve_lp_feasible_point(A, b, near) -> Tuple[np.ndarray, float, bool]:
    """Closest point (in ∞-norm) to ``near`` satisfying ``A u ≥ b`` exactly per LP tolerance."""
    A, b = _rows(A, b)
    m = A.shape[1]
    # minimise t s.t. −t ≤ u − near ≤ t, A u ≥ b
    c = np.zeros(m + 1)
    c[-1] = -1.0
    I = np.eye(m)
    G = np.vstack(
        [
            np.hstack([A, np.zeros((A.shape[0], 1))]),
            np.hstack([I, np.ones((m, 1))]),
            np.hstack([-I, np.ones((m, 1))]),
        ]
    )
    h = np.concatenate([b + 1e-12, near, -near])
    out = solve_lp(LinearProgram(c, G, h))
    if not out.ok:
        return np.asarray(near, dtype=float), np.inf, False
    return out.x[:m], float(out.x[-1]), True
