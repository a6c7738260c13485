"""Moment-relaxation verifier for control certificates.

Each condition of a specification becomes a task: a set of polynomial
constraints describing where the condition fails (the *violation set*).  The
task is relaxed to a moment program over the monomial vector m(w) of degree D,
with domain constraints entering through localizing matrices and equalities
through linear moment conditions.  A task passes when the relaxation shows the
violation set is empty (a positive slack δ* on the violation localizing
matrices), or, for stabilization tasks whose violation set always contains
the origin, when the optimal second moment E‖x‖² is zero.

Two relaxations of "no input decreases V" are available:

* ``vertex``: F0(x) + F(x)·v ≥ 0 at every vertex v of U (LP duality in closed
  form; the moment matrix lives over x only).
* ``farkas``: w = (x, λ) with λ ≥ 0, A_iᵀλ = F_i(x) and F0(x) + bᵀλ ≥ 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from .optim import LMIProgram, LinearProgram, SDP_TOL, SolveOutcome, Status, solve_lmi, solve_lp
from .poly import CompiledMap, Polynomial, gradient, lie_derivative, linear_combination, monomial_exponents
from .system import (
    ControlAffineSystem,
    Funnel,
    GlobalStability,
    LocalStability,
    ProblemSpec,
    ReachWhileStay,
    Safety,
    SemiAlgebraicSet,
    Specification,
)

OPT_TOL = 1e-6
POSITIVITY = "positivity"
DECREASE = "decrease"
FIRST = "first"
MAX_VIOLATION = "max"


class DegreeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# monomial bookkeeping


class MomentBasis:
    """Monomials of degree ≤ D in ``nw`` variables and the moment indexing they induce."""

    def __init__(self, nw: int, D: int):
        self.nw = nw
        self.D = D
        self.mons = monomial_exponents(nw, D)
        self.moments = monomial_exponents(nw, 2 * D)
        self.index: Dict[Tuple[int, ...], int] = {e: i for i, e in enumerate(self.moments)}
        s = len(self.mons)
        E = np.array(self.mons, dtype=int)
        self._E = E
        self.pair = np.empty((s, s), dtype=int)
        for a in range(s):
            for b in range(a, s):
                k = self.index[tuple(E[a] + E[b])]
                self.pair[a, b] = k
                self.pair[b, a] = k
        # canonical (a, b) for each moment, used for ⟨G, Z⟩ reads
        self.canonical = np.full((len(self.moments), 2), -1, dtype=int)
        for a in range(s):
            for b in range(a, s):
                k = self.pair[a, b]
                if self.canonical[k, 0] < 0:
                    self.canonical[k] = (a, b)
        self._loc_cache: Dict[int, np.ndarray] = {}

    @property
    def side(self) -> int:
        return len(self.mons)

    @property
    def num_moments(self) -> int:
        return len(self.moments)

    def point_moments(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        M = np.array(self.moments, dtype=int)
        return np.prod(w[None, :] ** M, axis=1)

    def matrix(self, y) -> np.ndarray:
        return np.asarray(y)[self.pair]

    def moments_from_matrix(self, Z) -> np.ndarray:
        return np.asarray(Z)[self.canonical[:, 0], self.canonical[:, 1]]

    def coefficients(self, p: Polynomial) -> np.ndarray:
        """Vector c with E[p] = c·y."""
        if p.dimension != self.nw:
            raise ValueError(f"polynomial has dimension {p.dimension}, frame has {self.nw}")
        c = np.zeros(self.num_moments)
        for e, v in p.terms.items():
            if e not in self.index:
                raise DegreeError(f"monomial of degree {sum(e)} exceeds 2D = {2 * self.D}")
            c[self.index[e]] += v
        return c

    def functional(self, p: Polynomial, y) -> float:
        return float(self.coefficients(p) @ np.asarray(y))

    def gram(self, p: Polynomial) -> np.ndarray:
        """Symmetric G with ⟨G, Z⟩ = E[p] for Z = matrix(y)."""
        s = self.side
        G = np.zeros((s, s))
        for e, v in p.terms.items():
            if e not in self.index:
                raise DegreeError(f"monomial of degree {sum(e)} exceeds 2D = {2 * self.D}")
            a, b = self.canonical[self.index[e]]
            if a == b:
                G[a, a] += v
            else:
                G[a, b] += v / 2
                G[b, a] += v / 2
        return G

    def localizing_block(self, g: Polynomial) -> Tuple[int, sp.csr_matrix, np.ndarray]:
        """(side, F, f) with F·y + f the upper triangle of M_k(g·y), k = D − ⌈deg g / 2⌉."""
        k = self.D - math.ceil(max(g.degree, 0) / 2)
        if k < 0:
            raise DegreeError(f"constraint of degree {g.degree} needs D ≥ {math.ceil(g.degree / 2)}")
        sub = [e for e in self.mons if sum(e) <= k]
        side = len(sub)
        S = np.array(sub, dtype=int)
        rows, cols, vals = [], [], []
        r = 0
        terms = [(np.array(e), v) for e, v in g.terms.items()]
        for j in range(side):
            for i in range(j + 1):
                base = S[i] + S[j]
                for e, v in terms:
                    rows.append(r)
                    cols.append(self.index[tuple(base + e)])
                    vals.append(v)
                r += 1
        F = sp.csr_matrix((vals, (rows, cols)), shape=(r, self.num_moments))
        return side, F, np.zeros(r)

    def equality_rows(self, h: Polynomial) -> sp.csr_matrix:
        """Rows E[h·w^γ] = 0 for all |γ| ≤ 2D − deg h."""
        top = 2 * self.D - max(h.degree, 0)
        if top < 0:
            raise DegreeError(f"equality of degree {h.degree} exceeds 2D")
        gammas = monomial_exponents(self.nw, top)
        rows, cols, vals = [], [], []
        terms = list(h.terms.items())
        for r, gm in enumerate(gammas):
            gm = np.array(gm)
            for e, v in terms:
                rows.append(r)
                cols.append(self.index[tuple(gm + np.array(e))])
                vals.append(v)
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(gammas), self.num_moments))


# ---------------------------------------------------------------------------
# frame


@dataclass(frozen=True)
class MomentCounterexample:
    kind: str
    task_id: str
    Z: np.ndarray
    x: np.ndarray
    gamma: float
    y: np.ndarray
    frame_vars: int
    point: Optional[np.ndarray] = None
    spurious: bool = False
    objective: float = float("nan")

    @property
    def is_point(self) -> bool:
        return self.point is not None


@dataclass(frozen=True)
class Verified:
    objectives: Tuple[Tuple[str, float], ...] = ()


class MomentFrame:
    """Monomial frames, basis functionals and the lifted system for one problem."""

    def __init__(self, problem: ProblemSpec, basis: Sequence[Polynomial] | None = None, D: int | None = None,
                 formulation: str = "vertex"):
        if formulation not in ("vertex", "farkas"):
            raise ValueError("formulation must be 'vertex' or 'farkas'")
        self.problem = problem
        self.basis = tuple(problem.basis if basis is None else basis)
        self.D = int(problem.D if D is None else D)
        self.formulation = formulation
        self.nx = problem.certificate_dimension
        self.n = problem.n
        self.system = problem.lifted_system()
        U = self.system.U
        self.U = U
        self.vertices = U.vertices()
        self.p = U.rows if formulation == "farkas" else 0
        self.x_frame = MomentBasis(self.nx, self.D)
        self.w_frame = MomentBasis(self.nx + self.p, self.D) if self.p else self.x_frame
        self.offset = float(problem.offset)
        # field used in Lie derivatives: funnels get ṫ = 1 in the drift
        nx = self.nx
        f0 = list(self.system.f0)
        if isinstance(problem.spec, Funnel):
            f0[-1] = Polynomial.constant(1.0, nx)
        self.fields: List[List[Polynomial]] = [f0] + [list(fi) for fi in self.system.f]
        self.lie_basis: List[List[Polynomial]] = [
            [lie_derivative(g, fld) for fld in self.fields] for g in self.basis
        ]
        need = 0
        for g, lies in zip(self.basis, self.lie_basis):
            need = max(need, g.degree, *(q.degree for q in lies))
        if 2 * self.D < need:
            raise DegreeError(f"degree bound violated: D={self.D} < {math.ceil(need / 2)}")

    # spec-facing views
    @property
    def side(self) -> int:
        return self.w_frame.side

    @property
    def Z0(self) -> np.ndarray:
        Z = np.zeros((self.side, self.side))
        Z[0, 0] = 1.0
        return Z

    def lift(self, w) -> np.ndarray:
        """Z(w) = m(w) m(w)ᵀ over the full frame; missing λ entries are zero."""
        w = np.asarray(w, dtype=float)
        full = np.zeros(self.w_frame.nw)
        full[: len(w)] = w
        m = np.prod(full[None, :] ** np.array(self.w_frame.mons), axis=1)
        return np.outer(m, m)

    def G(self, k: int) -> np.ndarray:
        return self.w_frame.gram(self._embed(self.basis[k]))

    def G_lie(self, k: int, i: int) -> np.ndarray:
        return self.w_frame.gram(self._embed(self.lie_basis[k][i]))

    def _embed(self, p: Polynomial) -> Polynomial:
        return p if p.dimension == self.w_frame.nw else p.embed(self.w_frame.nw)

    def certificate(self, c) -> Polynomial:
        """Σ c_k g_k plus the problem's fixed offset."""
        V = linear_combination(c, self.basis)
        if self.offset:
            V = V + self.offset
        return V

    def lie(self, V: Polynomial) -> List[Polynomial]:
        return [lie_derivative(V, fld) for fld in self.fields]

    def frame_for(self, y_or_Z) -> MomentBasis:
        a = np.asarray(y_or_Z)
        if a.ndim == 2:
            return self.w_frame if a.shape[0] == self.w_frame.side else self.x_frame
        return self.w_frame if a.shape[0] == self.w_frame.num_moments else self.x_frame


def build_frame(problem: ProblemSpec, basis=None, D=None, formulation: str = "vertex") -> MomentFrame:
    return MomentFrame(problem, basis, D, formulation)


def project(Z, nx: Optional[int] = None) -> np.ndarray:
    """First-row entries at the degree-one positions (the state part)."""
    Z = np.asarray(Z)
    row = Z[0, 1:]
    return row[:nx].copy() if nx is not None else row.copy()


def lift_functionals(frame: MomentFrame, Z) -> Tuple[np.ndarray, np.ndarray]:
    """(⟨G_k, Z⟩)_k and (⟨G_ki, Z⟩)_{k,i}; i = 0 is the drift (with ∂/∂t for funnels)."""
    fr = frame.frame_for(Z)
    y = fr.moments_from_matrix(Z) if np.asarray(Z).ndim == 2 else np.asarray(Z)
    return _functionals(frame, fr, y)


def _functionals(frame: MomentFrame, fr: MomentBasis, y) -> Tuple[np.ndarray, np.ndarray]:
    emb = (lambda p: p) if fr.nw == frame.nx else (lambda p: p.embed(fr.nw))
    g = np.array([fr.functional(emb(gk), y) for gk in frame.basis])
    lie = np.array([[fr.functional(emb(q), y) for q in row] for row in frame.lie_basis])
    return g, lie


def point_functionals(frame: MomentFrame, x) -> Tuple[np.ndarray, np.ndarray]:
    """Exact functionals at a concrete state (the lift of a point)."""
    x = np.asarray(x, dtype=float)
    g = np.array([gk(x) for gk in frame.basis])
    lie = np.array([[q(x) for q in row] for row in frame.lie_basis])
    return g, lie


# ---------------------------------------------------------------------------
# tasks


@dataclass
class VerificationTask:
    kind: str
    id: str
    frame: MomentBasis
    ineqs: List[Polynomial]  # domain constraints g ≥ 0; violation polys are kept apart
    eqs: List[Polynomial]
    violation: List[Polynomial]
    punctured: bool
    sign: int = 0  # +1: V must be positive, −1: V must be negative, 0: decrease
    domain: List[Polynomial] = field(default_factory=list)
    outside: List[Polynomial] = field(default_factory=list)
    cap: Optional[float] = None
    nx: int = 0

    @property
    def side(self) -> int:
        return self.frame.side


def _neg(ps: Sequence[Polynomial]) -> List[Polynomial]:
    return [-p for p in ps]


def _set_constraints(s: SemiAlgebraicSet, nx: int) -> List[Polynomial]:
    return [p if p.dimension == nx else p.embed(nx) for p in s.constraints]


def _time(frame: MomentFrame) -> Polynomial:
    return Polynomial.variable(frame.nx - 1, frame.nx)


def positivity_tasks(frame: MomentFrame, V: Polynomial, spec: Specification) -> List[VerificationTask]:
    """Tasks for the sign conditions on V (no inputs involved)."""
    nx = frame.nx
    fr = frame.x_frame
    tasks: List[VerificationTask] = []
    if isinstance(spec, (GlobalStability, LocalStability)):
        dom = [] if isinstance(spec, GlobalStability) else _neg(_set_constraints(spec.S, nx))
        cap = 1.0 if isinstance(spec, GlobalStability) or spec.S.lo is None else None
        tasks.append(VerificationTask(POSITIVITY, "V>0", fr, dom, [], [-V], True, +1, dom, [], cap, nx))
        return tasks
    S = _set_constraints(spec.S, nx)
    I = _set_constraints(spec.I, nx)
    if isinstance(spec, (Safety, ReachWhileStay)):
        dom = _neg(I)
        tasks.append(VerificationTask(POSITIVITY, "V<0 on I", fr, dom, [], [V], False, -1, dom, [], None, nx))
        for i, p in enumerate(S):
            dom = _neg(S)
            tasks.append(
                VerificationTask(POSITIVITY, f"V>0 off S[{i}]", fr, dom, [p], [-V], False, +1, dom, [p], None, nx)
            )
        return tasks
    if isinstance(spec, Funnel):
        t = _time(frame)
        H = spec.horizon
        tsup = t * (H - t)
        dom = _neg(I)
        tasks.append(
            VerificationTask(POSITIVITY, "V<0 on I at t=0", fr, dom, [t], [V], False, -1, dom + [-(t * t)], [], None, nx)
        )
        T = _set_constraints(spec.T, nx)
        for i, p in enumerate(T):
            dom = _neg(S) + [p]
            tasks.append(
                VerificationTask(
                    POSITIVITY, f"V>0 off T[{i}] at t=H", fr, dom, [t - H], [-V], False, +1,
                    _neg(S) + [-((t - H) * (t - H))], [p], None, nx,
                )
            )
        for i, p in enumerate(S):
            dom = _neg(S) + [tsup]
            tasks.append(
                VerificationTask(POSITIVITY, f"V>0 off S[{i}]", fr, dom, [p], [-V], False, +1, dom, [p], None, nx)
            )
        return tasks
    raise TypeError(f"unsupported specification {spec!r}")


def _decrease_violation(frame: MomentFrame, V: Polynomial) -> Tuple[MomentBasis, List[Polynomial], List[Polynomial], List[Polynomial]]:
    """(frame, inequalities, equalities, violation polys) encoding 'no input decreases V'."""
    F = frame.lie(V)
    if frame.formulation == "vertex":
        viol = []
        for v in frame.vertices:
            q = F[0]
            for i, vi in enumerate(v):
                if vi != 0.0:
                    q = q + F[i + 1] * float(vi)
            viol.append(q)
        return frame.x_frame, [], [], viol
    fr = frame.w_frame
    nx, p = frame.nx, frame.p
    nw = nx + p
    lam = [Polynomial.variable(nx + l, nw) for l in range(p)]
    A, b = frame.U.A, frame.U.b
    Fw = [q.embed(nw) for q in F]
    ineqs = list(lam)
    eqs = []
    for i in range(frame.U.m):
        h = Fw[i + 1]
        for l in range(p):
            if A[l, i] != 0.0:
                h = h - lam[l] * float(A[l, i])
        eqs.append(h)
    viol = Fw[0]
    for l in range(p):
        if b[l] != 0.0:
            viol = viol + lam[l] * float(b[l])
    # box inputs: at the maximising multiplier the paired rows are complementary
    box = frame.U.box_bounds()
    if box is not None:
        for i in range(frame.U.m):
            pair = [l for l in range(p) if A[l, i] != 0.0]
            if len(pair) == 2:
                eqs.append(lam[pair[0]] * lam[pair[1]])
    return fr, ineqs, eqs, [viol]


def decrease_tasks(frame: MomentFrame, V: Polynomial, spec: Specification) -> List[VerificationTask]:
    """One task per decrease domain group."""
    nx = frame.nx
    fr, vin, veq, viol = _decrease_violation(frame, V)
    emb = (lambda p: p) if fr.nw == nx else (lambda p: p.embed(fr.nw))
    tasks = []
    if isinstance(spec, (GlobalStability, LocalStability)):
        dom = [] if isinstance(spec, GlobalStability) else _neg(_set_constraints(spec.S, nx))
        cap = 1.0 if isinstance(spec, GlobalStability) or spec.S.lo is None else None
        tasks.append(
            VerificationTask(DECREASE, "dV<0", fr, [emb(p) for p in dom] + vin, veq, viol, True, 0, dom, [], cap, nx)
        )
        return tasks
    S = _set_constraints(spec.S, nx)
    if isinstance(spec, (Safety, ReachWhileStay)):
        excl = _set_constraints(spec.I if isinstance(spec, Safety) else spec.T, nx)
        name = "I" if isinstance(spec, Safety) else "T"
        for i, p in enumerate(excl):
            dom = _neg(S)
            tasks.append(
                VerificationTask(
                    DECREASE, f"dV<0 on S\\{name}[{i}]", fr, [emb(q) for q in dom + [p]] + vin, veq, viol, False, 0,
                    dom, [p], None, nx,
                )
            )
        return tasks
    if isinstance(spec, Funnel):
        t = _time(frame)
        dom = _neg(S) + [t * (spec.horizon - t)]
        tasks.append(
            VerificationTask(DECREASE, "dV<0 on S x [0,H]", fr, [emb(q) for q in dom] + vin, veq, viol, False, 0, dom, [], None, nx)
        )
        return tasks
    raise TypeError(f"unsupported specification {spec!r}")


def decrease_task(frame: MomentFrame, V: Polynomial, spec: Specification) -> List[VerificationTask]:
    return decrease_tasks(frame, V, spec)


def all_tasks(frame: MomentFrame, V: Polynomial, spec: Specification) -> List[VerificationTask]:
    return positivity_tasks(frame, V, spec) + decrease_tasks(frame, V, spec)


# ---------------------------------------------------------------------------
# solving


@dataclass
class TaskResult:
    task: VerificationTask
    status: Status
    passed: bool
    objective: float
    y: Optional[np.ndarray] = None
    spurious: bool = False
    outcome: Optional[SolveOutcome] = None


def _second_moment(task: VerificationTask, states: int) -> Polynomial:
    nw = task.frame.nw
    q = Polynomial.zero(nw)
    for i in range(states):
        xi = Polynomial.variable(i, nw)
        q = q + xi * xi
    return q


def _diagonal_column(side: int) -> sp.csr_matrix:
    k = np.arange(side)
    pos = k * (k + 1) // 2 + k
    return sp.csr_matrix((np.ones(side), (pos, np.zeros(side, dtype=int))), shape=(side * (side + 1) // 2, 1))


def build_program(task: VerificationTask, mode: str = FIRST, states: Optional[int] = None) -> Tuple[LMIProgram, int]:
    """Moment program for a task; returns the program and the number of moment variables.

    Punctured tasks maximise E‖x‖² over the relaxed violation set.  Other
    tasks get one scalar slack δ added to the diagonal of every violation
    localizing matrix and minimise it: δ* > 0 certifies that the relaxed
    violation set is empty, while a violating point makes δ = 0 feasible.
    In ``MAX_VIOLATION`` mode the program maximises γ subject to E[q] ≥ γ
    for each violation polynomial q.
    """
    fr = task.frame
    M = fr.num_moments
    slack = mode == MAX_VIOLATION or not task.punctured
    nv = M + (1 if slack else 0)
    states = task.nx if states is None else states
    spread = fr.coefficients(_second_moment(task, states))

    def widen(A, column=None):
        A = sp.csr_matrix(A)
        if not slack:
            return A
        col = sp.csr_matrix((A.shape[0], 1)) if column is None else column
        return sp.hstack([A, col], format="csr")

    E_parts = [sp.csr_matrix(([1.0], ([0], [0])), shape=(1, M))]
    for h in task.eqs:
        E_parts.append(fr.equality_rows(h))
    E = widen(sp.vstack(E_parts, format="csr"))
    e = np.zeros(E.shape[0])
    e[0] = 1.0
    side, F, f = fr.localizing_block(Polynomial.constant(1.0, fr.nw))
    blocks = [(side, widen(F), f)]
    for g in task.ineqs:
        side, F, f = fr.localizing_block(g)
        blocks.append((side, widen(F), f))
    if mode != MAX_VIOLATION:
        for q in task.violation:
            side, F, f = fr.localizing_block(q)
            blocks.append((side, widen(F, None if task.punctured else _diagonal_column(side)), f))
    G_rows, h = [], []
    if task.cap is not None:
        G_rows.append(widen(-spread[None, :]))
        h.append(-task.cap)
    c = np.zeros(nv)
    if mode == MAX_VIOLATION:
        for q in task.violation:
            G_rows.append(sp.csr_matrix(np.concatenate([fr.coefficients(q), [-1.0]])))
            h.append(0.0)
        if task.punctured:
            # keep mass away from the trivial atom at the origin
            G_rows.append(widen(spread[None, :]))
            h.append(min(task.cap or 1.0, 1.0) * 1e-2)
        c[-1] = 1.0
    elif task.punctured:
        c[:M] = spread
    else:
        c[-1] = -1.0
        G_rows.append(sp.csr_matrix(np.concatenate([np.zeros(M), [1.0]])))
        h.append(-1.0)
    G = sp.vstack(G_rows, format="csr") if G_rows else None
    prog = LMIProgram(c=c, E=E, e=e, G=G, h=np.array(h) if G_rows else None, blocks=blocks)
    return prog, M


def solve_task(task: VerificationTask, mode: str = FIRST, tolerance: float = SDP_TOL, opt_tol: float = OPT_TOL) -> TaskResult:
    """Solve one task.  ``objective`` is 1 + E‖x‖² for punctured tasks and δ* otherwise."""
    prog, M = build_program(task, mode)
    out = solve_lmi(prog, tolerance)
    spread = task.frame.coefficients(_second_moment(task, task.nx))

    def objective(x):
        if mode == MAX_VIOLATION:
            return float(x[-1])
        if task.punctured:
            return 1.0 + float(spread @ x[:M])
        return float(x[-1])

    if out.status is Status.INFEASIBLE:
        # the relaxed domain is empty, so is the violation set
        return TaskResult(task, out.status, mode == FIRST, math.inf if not task.punctured else 1.0, outcome=out)
    if out.status is Status.OPTIMAL:
        val = objective(out.x)
        if mode != FIRST:
            passed = False
        elif task.punctured:
            passed = val <= 1.0 + opt_tol
        else:
            passed = val > opt_tol
        return TaskResult(task, out.status, passed, val, out.x[:M], outcome=out)
    if out.status is Status.UNBOUNDED:
        return TaskResult(task, out.status, False, math.inf, outcome=out)
    est = out.info.get("x_estimate")
    if est is not None:
        return TaskResult(task, out.status, False, objective(est), est[:M], spurious=True, outcome=out)
    return TaskResult(task, out.status, False, math.nan, spurious=True, outcome=out)


# ---------------------------------------------------------------------------
# counterexample extraction


def _exact_violation(frame: MomentFrame, task: VerificationTask, V: Polynomial, x: np.ndarray,
                     dom_tol: float = 1e-8, value_tol: float = 1e-9) -> Optional[float]:
    """Violation amount at a concrete state, or None when x is not a genuine counterexample."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        return None
    for p in task.domain:
        if p(x) < -dom_tol:
            return None
    for h in task.outside:
        # the condition concerns every x outside int(set); reaching the boundary or beyond counts
        if h(x) < -dom_tol:
            return None
    if task.punctured and np.linalg.norm(x) <= 1e-7:
        return None
    if task.kind == POSITIVITY:
        val = -task.sign * V(x)
        return val if val >= -value_tol else None
    F = [q(x) for q in frame.lie(V)]
    best = min(F[0] + float(np.dot(F[1:], v)) for v in frame.vertices)
    return best if best >= -value_tol else None


def _candidate_points(fr: MomentBasis, y: np.ndarray, nx: int) -> List[np.ndarray]:
    nw = fr.nw
    mu = np.array([y[fr.index[tuple(int(j == i) for j in range(nw))]] for i in range(nx)])
    Sig = np.empty((nx, nx))
    for i in range(nx):
        for j in range(nx):
            e = [0] * nw
            e[i] += 1
            e[j] += 1
            Sig[i, j] = y[fr.index[tuple(e)]]
    pts = [mu]
    w, U = np.linalg.eigh(0.5 * (Sig + Sig.T))
    for k in range(nx - 1, max(nx - 3, -1), -1):
        sig, v = w[k], U[:, k]
        if sig <= 0:
            continue
        s = float(v @ mu)
        if abs(s) > 1e-12:
            pts.append(sig / s * v)
        pts.append(math.sqrt(sig) * v)
        pts.append(-math.sqrt(sig) * v)
    nm = np.linalg.norm(mu)
    if nm > 1e-12:
        pts.append(mu / nm * math.sqrt(max(np.trace(Sig), 0.0)))
    return pts


def _snap(task: VerificationTask, x: np.ndarray, iters: int = 20) -> np.ndarray:
    """Gauss-Newton pull of x onto the task's state equalities (boundary faces, time slices)."""
    eqs = [h for h in task.eqs if h.dimension == task.nx]
    if not eqs:
        return x
    grads = [gradient(h) for h in eqs]
    x = np.array(x, dtype=float)
    for _ in range(iters):
        r = np.array([h(x) for h in eqs])
        if np.max(np.abs(r)) < 1e-13:
            break
        J = np.array([[g(x) for g in gr] for gr in grads])
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        x = x - step
    return x


def _local_search(frame: MomentFrame, task: VerificationTask, V: Polynomial, start: np.ndarray,
                  maxiter: int = 60) -> np.ndarray:
    """SLSQP on (x, t): maximise t with every violation value ≥ t, x in the task domain.

    Punctured tasks compare violation against t·‖x‖² so the search is not drawn to the origin.
    """
    if task.kind == POSITIVITY:
        viol = [V * float(-task.sign)]
    else:
        F = frame.lie(V)
        viol = [F[0] + sum((F[i + 1] * float(vi) for i, vi in enumerate(v) if vi != 0.0), Polynomial.zero(frame.nx))
                for v in frame.vertices]
    n = frame.nx
    if task.punctured:
        if np.linalg.norm(start) < 1e-3:
            return start
        scale = lambda z: float(z[:n] @ z[:n])
    else:
        scale = lambda z: 1.0
    cons = [{"type": "ineq", "fun": (lambda z, q=q: q(z[:n]) - z[n] * scale(z))} for q in viol]
    cons += [{"type": "ineq", "fun": (lambda z, p=p: p(z[:n]))} for p in list(task.domain) + list(task.outside)]
    cons += [{"type": "eq", "fun": (lambda z, h=h: h(z[:n]))} for h in task.eqs if h.dimension == n]
    if task.punctured:
        r2 = 1e-6 * max(1.0, float(start @ start))
        cons.append({"type": "ineq", "fun": lambda z: float(z[:n] @ z[:n]) - r2})
    z = np.append(start, 0.0)
    z[n] = min(q(start) for q in viol) / scale(z)
    try:
        out = minimize(lambda z: -z[n], z, method="SLSQP", constraints=cons,
                       options={"maxiter": maxiter, "ftol": 1e-12})
    except (ValueError, np.linalg.LinAlgError, ZeroDivisionError):
        return start
    return out.x[:n] if np.all(np.isfinite(out.x)) else start


def extract_counterexample(frame: MomentFrame, task: VerificationTask, V: Polynomial, res: TaskResult) -> MomentCounterexample:
    fr = task.frame
    y = res.y
    Z = fr.matrix(y)
    x_proj = project(Z, frame.nx)
    point = None
    best = -math.inf
    starts = _candidate_points(fr, y, frame.nx)

    def scan(cands):
        nonlocal point, best
        for cand in cands:
            for x in (cand, _snap(task, cand)):
                val = _exact_violation(frame, task, V, x)
                if val is not None and val > best:
                    best, point = val, x

    scan(starts)
    # relaxations with a capped objective report shrunken atoms; try them further out, nearest first
    for s in (2.0, 4.0, 8.0, 16.0, 32.0, 64.0):
        if point is not None:
            break
        scan([p * s for p in starts if np.linalg.norm(p) > 1e-9])
    if point is None:
        # the moments may describe a mixture; look for a genuine violating state near its atoms
        for cand in starts:
            x = _local_search(frame, task, V, cand)
            val = _exact_violation(frame, task, V, x)
            if val is not None and val > best:
                best, point = val, x
    if task.kind == POSITIVITY:
        gamma = float(-task.sign * fr.functional(V if fr.nw == frame.nx else V.embed(fr.nw), y))
    else:
        gamma = float(min(fr.functional(q, y) for q in task.violation))
    return MomentCounterexample(
        kind=task.kind,
        task_id=task.id,
        Z=Z,
        x=x_proj,
        gamma=gamma,
        y=np.asarray(y),
        frame_vars=fr.nw,
        point=None if point is None else np.asarray(point),
        spurious=res.spurious,
        objective=res.objective,
    )


@dataclass
class VerificationReport:
    verified: bool
    results: List[TaskResult]
    counterexample: Optional[MomentCounterexample] = None
    trouble: bool = False

    @property
    def transcript(self) -> List[dict]:
        return [
            {"task": r.task.id, "kind": r.task.kind, "status": r.status.value, "objective": r.objective, "passed": r.passed}
            for r in self.results
        ]


def verify(frame: MomentFrame, c, spec: Optional[Specification] = None, mode: str = FIRST,
           tolerance: float = SDP_TOL, opt_tol: float = OPT_TOL, V: Optional[Polynomial] = None) -> VerificationReport:
    """Check every task in order (positivity first); stop at the first failure."""
    spec = frame.problem.spec if spec is None else spec
    if V is None:
        V = frame.certificate(c)
    results: List[TaskResult] = []
    for task in all_tasks(frame, V, spec):
        res = solve_task(task, FIRST, tolerance, opt_tol)
        if res.status is Status.NUMERICAL_TROUBLE and res.y is None:
            res = solve_task(task, FIRST, tolerance * 10, opt_tol)
        results.append(res)
        if res.passed:
            continue
        if res.y is None:
            return VerificationReport(False, results, None, trouble=True)
        cex = extract_counterexample(frame, task, V, res)
        if mode == MAX_VIOLATION and not res.spurious:
            deep = solve_task(task, MAX_VIOLATION, tolerance, opt_tol)
            if deep.status is Status.OPTIMAL and deep.y is not None:
                alt = extract_counterexample(frame, task, V, deep)
                if deep.objective > opt_tol and (alt.point is not None or cex.point is None):
                    cex = alt
        return VerificationReport(False, results, cex)
    return VerificationReport(True, results)


def farkas_feasible(x, V: Polynomial, system: ControlAffineSystem, drift_extra: Optional[Polynomial] = None) -> bool:
    """Exact check that no u ∈ U decreases V at x (feasibility of the multiplier LP)."""
    x = np.asarray(x, dtype=float)
    grad = gradient(V)
    gv = np.array([g(x) for g in grad])
    a = float(gv[: system.n] @ system.drift(x[: system.n]))
    if drift_extra is not None:
        a += float(drift_extra(x))
    G = system.input_matrix(x[: system.n])
    bvec = gv[: system.n] @ G
    A, b = system.U.A, system.U.b
    p = A.shape[0]
    # λ ≥ 0, Aᵀλ = ∇V·f_i, bᵀλ ≥ −∇V·f0
    lp = LinearProgram(
        c=np.zeros(p),
        G=np.vstack([np.eye(p), b[None, :]]),
        h=np.concatenate([np.zeros(p), [-a]]),
        E=A.T,
        d=bvec,
    )
    out = solve_lp(lp)
    if out.status is Status.NUMERICAL_TROUBLE:
        raise RuntimeError(f"Farkas LP failed: {out.info.get('message')}")
    return out.status is Status.OPTIMAL


def min_decrease(x, V: Polynomial, system: ControlAffineSystem, vertices: Optional[np.ndarray] = None) -> float:
    """min over u ∈ U of ∇V·f(x, u) (attained at a vertex of U)."""
    x = np.asarray(x, dtype=float)
    if vertices is None:
        vertices = system.U.vertices()
    gv = np.array([g(x) for g in gradient(V)])
    a = float(gv @ system.drift(x))
    bvec = gv @ system.input_matrix(x)
    return float(a + np.min(vertices @ bvec))


def sample_audit(problem: ProblemSpec, V: Polynomial, samples: int = 10_000, seed: int = 0) -> dict:
    """State-sampling check of every condition at random points of the relevant domains."""
    rng = np.random.default_rng(seed)
    spec = problem.spec
    sysl = problem.lifted_system()
    verts = sysl.U.vertices()
    nx = problem.certificate_dimension
    grads = gradient(V)
    f0 = list(sysl.f0)
    if isinstance(spec, Funnel):
        f0[-1] = Polynomial.constant(1.0, nx)
    gmap = CompiledMap(grads)
    report = {"samples": 0, "violations": 0, "worst": None}

    def decrease_values(X):
        Gv = gmap(X)
        drift = np.column_stack([p(X) if not p.is_zero() else np.zeros(len(X)) for p in f0])
        a = np.sum(Gv * drift, axis=1)
        B = np.column_stack(
            [np.sum(Gv[:, : len(fi)] * np.column_stack([q(X) for q in fi]), axis=1) for fi in sysl.f]
        )
        return a + np.min(B @ verts.T, axis=1)

    def note(bad, what, X, vals):
        report["samples"] += len(X)
        k = int(np.count_nonzero(bad))
        report["violations"] += k
        if k and report["worst"] is None:
            j = int(np.flatnonzero(bad)[0])
            report["worst"] = {"condition": what, "x": X[j].tolist(), "value": float(vals[j])}

    def box_sample(s: SemiAlgebraicSet, count):
        return s.sample(rng, count)

    if isinstance(spec, (GlobalStability, LocalStability)):
        if isinstance(spec, LocalStability):
            X = box_sample(spec.S, samples)
        else:
            X = rng.normal(size=(samples, nx)) * rng.uniform(0.01, 10.0, size=(samples, 1))
        X = X[np.linalg.norm(X, axis=1) > 1e-6]
        v = V(X)
        note(v <= 0, "V>0", X, v)
        d = decrease_values(X)
        note(d >= 0, "dV<0", X, d)
        return report
    if isinstance(spec, Funnel):
        H = spec.horizon
        n = problem.n
        XI = spec.I.sample(rng, samples)
        X = np.column_stack([XI, np.zeros(len(XI))])
        v = V(X)
        note(v >= 0, "V<0 on I at t=0", X, v)
        XS = spec.S.sample(rng, samples)
        X = np.column_stack([XS, np.full(len(XS), H)])
        out = ~spec.T.contains(XS, strict=True)
        v = V(X)
        note((v <= 0) & out, "V>0 off T at t=H", X, v)
        X = np.column_stack([XS, rng.uniform(0, H, len(XS))])
        d = decrease_values(X)
        note(d >= 0, "dV<0", X, d)
        # boundary of S: push samples radially onto a face of the bounding box when S is a box
        if spec.S.lo is not None:
            Xb = XS.copy()
            ax = rng.integers(0, n, len(Xb))
            side = rng.integers(0, 2, len(Xb))
            Xb[np.arange(len(Xb)), ax] = np.where(side == 1, spec.S.hi[ax], spec.S.lo[ax])
            Xb = Xb[~spec.S.contains(Xb, strict=True)]
            X = np.column_stack([Xb, rng.uniform(0, H, len(Xb))])
            v = V(X)
            note(v <= 0, "V>0 off S", X, v)
        return report
    S = spec.S
    XI = spec.I.sample(rng, samples)
    v = V(XI)
    note(v >= 0, "V<0 on I", XI, v)
    XS = S.sample(rng, samples)
    excl = spec.I if isinstance(spec, Safety) else spec.T
    Xd = XS[~excl.contains(XS, strict=True)]
    d = decrease_values(Xd)
    note(d >= 0, "dV<0", Xd, d)
    if S.lo is not None:
        Xb = XS.copy()
        ax = rng.integers(0, problem.n, len(Xb))
        side = rng.integers(0, 2, len(Xb))
        Xb[np.arange(len(Xb)), ax] = np.where(side == 1, S.hi[ax], S.lo[ax])
        Xb = Xb[~S.contains(Xb, strict=True)]
        v = V(Xb)
        note(v <= 0, "V>0 off S", Xb, v)
    return report
