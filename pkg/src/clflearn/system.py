"""Plants, input polytopes, semi-algebraic sets and specifications.

Problem files are JSON documents (``"schema": 1``) holding the dynamics as
polynomial records, the input polytope ``A u ≥ b``, a specification block and
the learner/verifier/demonstrator settings.  :func:`load_problem` validates
everything it reads; :func:`serialize_problem` is its inverse.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from itertools import combinations, product
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog

from .optim import project_onto_polytope
from .poly import CompiledMap, Polynomial, lie_derivative, monomial_basis

SCHEMA_VERSION = 1


class ProblemError(ValueError):
    """Raised for malformed problem documents or violated invariants."""


# ---------------------------------------------------------------------------
# input polytope


@dataclass(frozen=True, eq=False)
class InputPolytope:
    """Admissible inputs ``{u | A u ≥ b}``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape[0] != b.shape[0]:
            raise ProblemError("input polytope: A and b have different row counts")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def rows(self) -> int:
        return self.A.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, InputPolytope)
            and self.A.shape == other.A.shape
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.b, other.b)
        )

    def validate(self) -> None:
        """Check the polytope is non-empty and bounded, one LP per direction."""
        A, b = self.A, self.b
        res = linprog(np.zeros(self.m), A_ub=-A, b_ub=-b, bounds=[(None, None)] * self.m, method="highs")
        if res.status == 2:
            raise ProblemError("empty input polytope")
        for i, sign in product(range(self.m), (1.0, -1.0)):
            c = np.zeros(self.m)
            c[i] = sign
            res = linprog(c, A_ub=-A, b_ub=-b, bounds=[(None, None)] * self.m, method="highs")
            if res.status == 3:
                raise ProblemError("unbounded input polytope")
            if res.status != 0:
                raise ProblemError(f"input polytope check failed: {res.message}")

    def box_bounds(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """(lo, hi) when every row is ±e_i, else None."""
        lo = np.full(self.m, -np.inf)
        hi = np.full(self.m, np.inf)
        for a, bi in zip(self.A, self.b):
            nz = np.flatnonzero(a)
            if len(nz) != 1:
                return None
            i = nz[0]
            if a[i] > 0:
                lo[i] = max(lo[i], bi / a[i])
            else:
                hi[i] = min(hi[i], bi / a[i])
        if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
            return None
        return lo, hi

    def contains(self, u, tol: float = 1e-9) -> bool:
        return bool(np.all(self.A @ np.asarray(u, dtype=float) >= self.b - tol))

    def vertices(self) -> np.ndarray:
        """Vertices in lexicographic order (enumeration over m-row subsets)."""
        box = self.box_bounds()
        if box is not None:
            lo, hi = box
            verts = np.array(list(product(*zip(lo, hi))))
        else:
            pts = []
            for rows in combinations(range(self.rows), self.m):
                Asub = self.A[list(rows)]
                if abs(np.linalg.det(Asub)) < 1e-12:
                    continue
                u = np.linalg.solve(Asub, self.b[list(rows)])
                if self.contains(u, 1e-9):
                    pts.append(u)
            verts = np.unique(np.round(np.array(pts), 12), axis=0)
        order = np.lexsort(verts.T[::-1])
        return verts[order]

    def project(self, u: np.ndarray) -> np.ndarray:
        """Euclidean projection; rows of ``u`` are projected independently."""
        u = np.asarray(u, dtype=float)
        box = self.box_bounds()
        if box is not None:
            return np.clip(u, box[0], box[1])
        if u.ndim == 1:
            return project_onto_polytope(self.A, self.b, u)
        return np.array([project_onto_polytope(self.A, self.b, row) for row in u])


def interval_to_polytope(lo: Sequence[float], hi: Sequence[float]) -> InputPolytope:
    """Box ``lo ≤ u ≤ hi`` as rows ``u_i ≥ lo_i`` and ``−u_i ≥ −hi_i``."""
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    if lo.shape != hi.shape:
        raise ProblemError("lo and hi differ in length")
    if np.any(lo >= hi):
        raise ProblemError("interval bounds need lo < hi in every component")
    m = len(lo)
    A = np.zeros((2 * m, m))
    b = np.zeros(2 * m)
    for i in range(m):
        A[2 * i, i] = 1.0
        b[2 * i] = lo[i]
        A[2 * i + 1, i] = -1.0
        b[2 * i + 1] = -hi[i]
    return InputPolytope(A, b)


# ---------------------------------------------------------------------------
# dynamics


class ControlAffineSystem:
    """ẋ = f0(x) + Σ_i f_i(x) u_i with u ∈ U."""

    def __init__(self, f0: Sequence[Polynomial], f: Sequence[Sequence[Polynomial]], U: InputPolytope):
        self.f0 = tuple(f0)
        self.f = tuple(tuple(fi) for fi in f)
        self.U = U
        self.n = len(self.f0)
        self.m = len(self.f)
        if self.n == 0:
            raise ProblemError("system has no states")
        for comp in self.f0 + tuple(c for fi in self.f for c in fi):
            if comp.dimension != self.n:
                raise ProblemError("every dynamics polynomial must have dimension n")
        for fi in self.f:
            if len(fi) != self.n:
                raise ProblemError("every input field needs n components")
        if U.m != self.m:
            raise ProblemError(f"input polytope has {U.m} inputs, system has {self.m}")
        self._drift = CompiledMap(self.f0)
        self._inputs = CompiledMap([c for fi in self.f for c in fi])
        self._jac_cache = None

    def fields(self) -> List[Tuple[Polynomial, ...]]:
        """[f0, f1, ..., fm]."""
        return [self.f0, *self.f]

    def drift(self, X) -> np.ndarray:
        return self._drift(X)

    def input_matrix(self, X) -> np.ndarray:
        """G(x) with columns f_i(x); shape (n, m) or (k, n, m)."""
        vals = self._inputs(X)
        if np.ndim(X) == 1:
            return vals.reshape(self.m, self.n).T
        return vals.reshape(-1, self.m, self.n).transpose(0, 2, 1)

    def dynamics(self, X, U) -> np.ndarray:
        """f(x, u), batched over leading dimension when X is 2-D."""
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        G = self.input_matrix(X)
        if X.ndim == 1:
            return self.drift(X) + G @ U
        return self.drift(X) + np.einsum("knm,km->kn", G, U)

    def _jacobians(self):
        if self._jac_cache is None:
            polys = []
            for fld in self.fields():
                for comp in fld:
                    polys.extend(comp.diff(j) for j in range(self.n))
            self._jac_cache = CompiledMap(polys)
        return self._jac_cache

    def state_jacobian(self, x, u) -> np.ndarray:
        """∂f/∂x at a single (x, u)."""
        vals = self._jacobians()(np.asarray(x, dtype=float)).reshape(self.m + 1, self.n, self.n)
        return vals[0] + np.tensordot(np.asarray(u, dtype=float), vals[1:], axes=1)

    def embed(self, dimension: int) -> "ControlAffineSystem":
        """Same dynamics with extra trailing variables that stay constant."""
        pad = [Polynomial.zero(dimension)] * (dimension - self.n)
        return ControlAffineSystem(
            [p.embed(dimension) for p in self.f0] + pad,
            [[p.embed(dimension) for p in fi] + pad for fi in self.f],
            self.U,
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ControlAffineSystem)
            and self.f0 == other.f0
            and self.f == other.f
            and self.U == other.U
        )


# ---------------------------------------------------------------------------
# sets


@dataclass(frozen=True, eq=False)
class SemiAlgebraicSet:
    """``{x | p_i(x) ≤ 0 ∀i}`` with an optional bounding box used for sampling."""

    constraints: Tuple[Polynomial, ...]
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    encoding: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        cons = tuple(self.constraints)
        if not cons:
            raise ProblemError("a semi-algebraic set needs at least one constraint")
        dims = {p.dimension for p in cons}
        if len(dims) != 1:
            raise ProblemError("set constraints differ in dimension")
        object.__setattr__(self, "constraints", cons)
        if self.lo is not None:
            object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
            object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    @property
    def dimension(self) -> int:
        return self.constraints[0].dimension

    def values(self, x) -> np.ndarray:
        """Constraint values p_i(x); shape (k,) or (batch, k)."""
        return CompiledMap(self.constraints)(x)

    def contains(self, x, strict: bool = False, tol: float = 0.0):
        v = self.values(x)
        ok = v < -tol if strict else v <= tol
        return np.all(ok, axis=-1)

    def sample(self, rng: np.random.Generator, count: int, max_rounds: int = 1000) -> np.ndarray:
        """Uniform samples by rejection from the bounding box."""
        if self.lo is None:
            raise ProblemError("set has no bounding box to sample from")
        out = []
        have = 0
        for _ in range(max_rounds):
            X = rng.uniform(self.lo, self.hi, size=(max(count, 64), self.dimension))
            X = X[self.contains(X)]
            out.append(X)
            have += len(X)
            if have >= count:
                break
        X = np.concatenate(out)[:count]
        if len(X) < count:
            raise ProblemError("rejection sampling failed to fill the request")
        return X

    def embed(self, dimension: int) -> "SemiAlgebraicSet":
        return SemiAlgebraicSet(tuple(p.embed(dimension) for p in self.constraints), self.lo, self.hi, self.encoding)

    def __eq__(self, other) -> bool:
        return isinstance(other, SemiAlgebraicSet) and self.constraints == other.constraints


def ball_set(center: Sequence[float], radius: float) -> SemiAlgebraicSet:
    """``{x | ‖x − c‖² − r² ≤ 0}``."""
    if not radius > 0:
        raise ProblemError("ball radius must be positive")
    c = np.asarray(center, dtype=float).ravel()
    n = len(c)
    p = Polynomial.constant(-radius * radius, n)
    for i in range(n):
        p = p + (Polynomial.variable(i, n) - float(c[i])) ** 2
    return SemiAlgebraicSet(
        (p,), c - radius, c + radius, {"ball": {"center": c.tolist(), "radius": float(radius)}}
    )


def box_set(lo: Sequence[float], hi: Sequence[float]) -> SemiAlgebraicSet:
    """``{x | (x_i − lo_i)(x_i − hi_i) ≤ 0 ∀i}``: one quadratic constraint per axis."""
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    if lo.shape != hi.shape or np.any(lo >= hi):
        raise ProblemError("box needs lo < hi in every component")
    n = len(lo)
    cons = tuple(
        (Polynomial.variable(i, n) - float(lo[i])) * (Polynomial.variable(i, n) - float(hi[i]))
        for i in range(n)
    )
    return SemiAlgebraicSet(cons, lo, hi, {"box": {"lo": lo.tolist(), "hi": hi.tolist()}})


# ---------------------------------------------------------------------------
# specifications


@dataclass(frozen=True)
class GlobalStability:
    kind = "global_stability"


@dataclass(frozen=True)
class LocalStability:
    S: SemiAlgebraicSet
    kind = "local_stability"


@dataclass(frozen=True)
class Safety:
    S: SemiAlgebraicSet
    I: SemiAlgebraicSet
    kind = "safety"


@dataclass(frozen=True)
class ReachWhileStay:
    S: SemiAlgebraicSet
    I: SemiAlgebraicSet
    T: SemiAlgebraicSet
    kind = "reach_while_stay"


@dataclass(frozen=True)
class Funnel:
    S: SemiAlgebraicSet
    I: SemiAlgebraicSet
    T: SemiAlgebraicSet
    horizon: float
    kind = "funnel"


Specification = Union[GlobalStability, LocalStability, Safety, ReachWhileStay, Funnel]


def is_stabilization(spec: Specification) -> bool:
    return isinstance(spec, (GlobalStability, LocalStability))


# ---------------------------------------------------------------------------
# problem


@dataclass(frozen=True)
class MpcConfig:
    """Demonstrator settings: step τ, horizon N, diagonal weights, descent budget.

    ``method`` picks the sequence optimiser: "pgd" (projected gradient), "lm"
    (bounded Levenberg-Marquardt, box inputs only) or "auto" (lm when U is a box).
    """

    tau: float = 1.0
    N: int = 30
    Q: Tuple[float, ...] = ()
    R: Tuple[float, ...] = ()
    max_iter: int = 500
    tol: float = 1e-8
    reference: Optional[Tuple[Polynomial, ...]] = None
    method: str = "pgd"

    def __post_init__(self):
        if not self.tau > 0:
            raise ProblemError("MPC time step must be positive")
        if int(self.N) < 1:
            raise ProblemError("MPC horizon must be at least one step")
        if any(q < 0 for q in self.Q) or any(r < 0 for r in self.R):
            raise ProblemError("MPC weights must be non-negative")
        if self.method not in ("auto", "lm", "pgd"):
            raise ProblemError(f"unknown MPC method {self.method!r}")
        object.__setattr__(self, "Q", tuple(float(q) for q in self.Q))
        object.__setattr__(self, "R", tuple(float(r) for r in self.R))
        object.__setattr__(self, "N", int(self.N))


@dataclass(frozen=True)
class ProblemSpec:
    system: ControlAffineSystem
    spec: Specification
    basis: Tuple[Polynomial, ...]
    D: int
    Delta: float = 100.0
    delta: float = 1e-3
    mpc: MpcConfig = MpcConfig()
    offset: float = 0.0
    name: str = "problem"
    basis_label: Optional[str] = None

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def r(self) -> int:
        return len(self.basis)

    @property
    def certificate_dimension(self) -> int:
        """n, or n+1 for funnels (time is the last variable)."""
        return self.n + 1 if isinstance(self.spec, Funnel) else self.n

    def lifted_system(self) -> ControlAffineSystem:
        """Dynamics in the certificate's variables."""
        d = self.certificate_dimension
        return self.system if d == self.n else self.system.embed(d)

    def replace(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)


def required_degree(basis: Sequence[Polynomial], system: ControlAffineSystem, dimension: int) -> int:
    """Smallest D with 2D ≥ deg g_j and 2D ≥ deg(∇g_j·f_i) for every j, i."""
    sys_l = system if dimension == system.n else system.embed(dimension)
    deg = 0
    for g in basis:
        deg = max(deg, g.degree)
        for fld in sys_l.fields():
            comps = list(fld) + [Polynomial.zero(dimension)] * (dimension - len(fld))
            deg = max(deg, lie_derivative(g, comps).degree)
    return max(1, math.ceil(deg / 2))


_BASIS_RE = re.compile(r"^monomials:(.*)$")


def parse_basis(label, dimension: int) -> List[Polynomial]:
    """Basis from a label or explicit record lists.

    Labels: ``monomials:maxdeg=K`` (optionally ``,mindeg=J``), ``quadratic``
    (all degree-two monomials), ``linear_only`` and ``squares:i,j,...`` (the
    pure squares of the listed one-based coordinates).
    """
    if isinstance(label, list):
        return [Polynomial.from_records(recs, dimension) for recs in label]
    if not isinstance(label, str):
        raise ProblemError("basis must be a label or a list of polynomials")
    if label == "quadratic":
        return monomial_basis(dimension, 2, 2)
    if label == "linear_only":
        return monomial_basis(dimension, 1, 1)
    if label.startswith("squares:"):
        idx = [int(s) - 1 for s in label.split(":", 1)[1].split(",") if s]
        if not idx or any(not 0 <= i < dimension for i in idx):
            raise ProblemError(f"bad squares basis {label!r}")
        return [Polynomial.variable(i, dimension) ** 2 for i in idx]
    m = _BASIS_RE.match(label)
    if not m:
        raise ProblemError(f"unknown basis label {label!r}")
    opts = {}
    for part in m.group(1).split(","):
        if not part:
            continue
        key, _, val = part.partition("=")
        opts[key.strip()] = int(val)
    if "maxdeg" not in opts:
        raise ProblemError("monomial basis needs maxdeg")
    return monomial_basis(dimension, opts["maxdeg"], opts.get("mindeg", 0))


def _poly_vec(data, n: int, what: str) -> List[Polynomial]:
    if not isinstance(data, list):
        raise ProblemError(f"{what} must be a list of polynomials")
    return [Polynomial.from_records(recs, n) for recs in data]


def _parse_set(data, n: int, what: str) -> SemiAlgebraicSet:
    if not isinstance(data, dict):
        raise ProblemError(f"set {what} must be an object")
    if "box" in data:
        s = box_set(data["box"]["lo"], data["box"]["hi"])
    elif "ball" in data:
        s = ball_set(data["ball"]["center"], data["ball"]["radius"])
    elif "polys" in data:
        cons = tuple(_poly_vec(data["polys"], n, what))
        bounds = data.get("bounds")
        lo = hi = None
        if bounds is not None:
            lo, hi = bounds["lo"], bounds["hi"]
        s = SemiAlgebraicSet(cons, lo, hi, {"polys": data["polys"], **({"bounds": bounds} if bounds else {})})
    else:
        raise ProblemError(f"set {what} needs one of box, ball, polys")
    if s.dimension != n:
        raise ProblemError(f"set {what} has dimension {s.dimension}, expected {n}")
    return s


def _set_to_json(s: SemiAlgebraicSet) -> dict:
    if s.encoding is not None:
        return s.encoding
    out = {"polys": [p.to_records() for p in s.constraints]}
    if s.lo is not None:
        out["bounds"] = {"lo": s.lo.tolist(), "hi": s.hi.tolist()}
    return out


def _parse_spec(data, n: int) -> Specification:
    if not isinstance(data, dict) or "type" not in data:
        raise ProblemError("spec needs a 'type'")
    kind = data["type"]
    try:
        if kind == "global_stability":
            return GlobalStability()
        if kind == "local_stability":
            return LocalStability(_parse_set(data["S"], n, "S"))
        if kind == "safety":
            return Safety(_parse_set(data["S"], n, "S"), _parse_set(data["I"], n, "I"))
        if kind == "reach_while_stay":
            return ReachWhileStay(
                _parse_set(data["S"], n, "S"), _parse_set(data["I"], n, "I"), _parse_set(data["T"], n, "T")
            )
        if kind == "funnel":
            horizon = float(data["horizon"])
            if not horizon > 0:
                raise ProblemError("funnel horizon must be positive")
            return Funnel(
                _parse_set(data["S"], n, "S"),
                _parse_set(data["I"], n, "I"),
                _parse_set(data["T"], n, "T"),
                horizon,
            )
    except KeyError as exc:
        raise ProblemError(f"spec {kind!r} is missing {exc.args[0]!r}") from None
    raise ProblemError(f"unknown spec type {kind!r}")


def _spec_to_json(spec: Specification) -> dict:
    out = {"type": spec.kind}
    for name in ("S", "I", "T"):
        if hasattr(spec, name):
            out[name] = _set_to_json(getattr(spec, name))
    if isinstance(spec, Funnel):
        out["horizon"] = spec.horizon
    return out


def check_invariants(problem: ProblemSpec, samples: int = 10_000, seed: int = 0) -> None:
    """Raise :class:`ProblemError` naming the first violated invariant."""
    system, spec = problem.system, problem.spec
    n = system.n
    system.U.validate()
    origin = np.zeros(n)
    if is_stabilization(spec):
        if np.max(np.abs(system.drift(origin))) > 1e-9:
            raise ProblemError("invariant 'equilibrium at origin' violated: f0(0) ≠ 0")
    if isinstance(spec, LocalStability):
        if not spec.S.contains(origin, strict=True):
            raise ProblemError("invariant 'origin in interior of S' violated")
    if isinstance(spec, (Safety, ReachWhileStay, Funnel)):
        if spec.I.lo is None:
            raise ProblemError("invariant 'I ⊂ int(S)' cannot be checked: I has no bounding box")
        rng = np.random.default_rng(seed)
        X = rng.uniform(spec.I.lo, spec.I.hi, size=(samples, n))
        X = X[spec.I.contains(X)]
        if len(X) and not np.all(spec.S.contains(X, strict=True)):
            raise ProblemError("invariant 'I ⊂ int(S)' violated")
    dim = problem.certificate_dimension
    for g in problem.basis:
        if g.dimension != dim:
            raise ProblemError(f"invariant 'basis dimension' violated: expected {dim}")
    need = required_degree(problem.basis, system, dim)
    if problem.D < need:
        raise ProblemError(f"invariant 'degree bound' violated: D={problem.D} < {need}")
    if not problem.Delta > problem.delta > 0:
        raise ProblemError("invariant 'Delta > delta > 0' violated")
    if problem.mpc.Q and len(problem.mpc.Q) != n:
        raise ProblemError("MPC state weights must have n entries")
    if problem.mpc.R and len(problem.mpc.R) != system.m:
        raise ProblemError("MPC input weights must have m entries")


def load_problem(document, *, name: Optional[str] = None, validate: bool = True) -> ProblemSpec:
    """Parse and validate a problem document (bytes, str or already-decoded dict)."""
    if isinstance(document, (bytes, bytearray)):
        document = document.decode("utf-8")
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ProblemError(f"schema error: invalid JSON ({exc})") from None
    if not isinstance(document, dict):
        raise ProblemError("schema error: problem document must be an object")
    if document.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ProblemError(f"schema error: unsupported schema {document.get('schema')}")
    try:
        n = int(document["n"])
        m = int(document["m"])
        f0 = _poly_vec(document["f0"], n, "f0")
        f = [_poly_vec(fi, n, "f") for fi in document["f"]]
        U = InputPolytope(np.array(document["U"]["A"], dtype=float).reshape(-1, m), document["U"]["b"])
        spec = _parse_spec(document["spec"], n)
        basis_label = document.get("basis", "quadratic")
        dim = n + 1 if isinstance(spec, Funnel) else n
        basis = parse_basis(basis_label, dim)
        mpc_doc = document.get("mpc", {})
        reference = mpc_doc.get("reference")
        mpc = MpcConfig(
            tau=float(mpc_doc.get("tau", 1.0)),
            N=int(mpc_doc.get("N", 30)),
            Q=tuple(mpc_doc.get("Q", [1.0] * n)),
            R=tuple(mpc_doc.get("R", [1.0] * m)),
            max_iter=int(mpc_doc.get("max_iter", 500)),
            tol=float(mpc_doc.get("tol", 1e-8)),
            method=str(mpc_doc.get("method", "pgd")),
            reference=None if reference is None else tuple(_poly_vec(reference, 1, "mpc.reference")),
        )
        D = document.get("D")
        system = ControlAffineSystem(f0, f, U)
        if D is None:
            D = required_degree(basis, system, dim)
        problem = ProblemSpec(
            system=system,
            spec=spec,
            basis=tuple(basis),
            D=int(D),
            Delta=float(document.get("Delta", 100.0)),
            delta=float(document.get("delta", 1e-3)),
            mpc=mpc,
            offset=float(document.get("offset", 0.0)),
            name=name or document.get("name", "problem"),
            basis_label=basis_label if isinstance(basis_label, str) else None,
        )
    except KeyError as exc:
        raise ProblemError(f"schema error: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProblemError):
            raise
        raise ProblemError(f"schema error: {exc}") from None
    if len(f) != m:
        raise ProblemError(f"schema error: {len(f)} input fields for m={m}")
    if validate:
        check_invariants(problem)
    return problem


def problem_to_dict(problem: ProblemSpec) -> dict:
    s = problem.system
    doc = {
        "schema": SCHEMA_VERSION,
        "name": problem.name,
        "n": s.n,
        "m": s.m,
        "f0": [p.to_records() for p in s.f0],
        "f": [[p.to_records() for p in fi] for fi in s.f],
        "U": {"A": s.U.A.tolist(), "b": s.U.b.tolist()},
        "spec": _spec_to_json(problem.spec),
        "basis": problem.basis_label
        if problem.basis_label is not None
        else [g.to_records() for g in problem.basis],
        "D": problem.D,
        "Delta": problem.Delta,
        "delta": problem.delta,
        "offset": problem.offset,
        "mpc": {
            "tau": problem.mpc.tau,
            "N": problem.mpc.N,
            "Q": list(problem.mpc.Q),
            "R": list(problem.mpc.R),
            "max_iter": problem.mpc.max_iter,
            "tol": problem.mpc.tol,
            "method": problem.mpc.method,
        },
    }
    if problem.mpc.reference is not None:
        doc["mpc"]["reference"] = [p.to_records() for p in problem.mpc.reference]
    return doc


def serialize_problem(problem: ProblemSpec) -> str:
    return json.dumps(problem_to_dict(problem), indent=1)


BUNDLED = (
    "tora", "bicycle", "inverted_pendulum", "unicycle_seg1", "unicycle_seg2",
    "integrator", "local2d", "safety2d", "funnel2d",
)


def bundled_path(name: str):
    """Path-like handle to a bundled problem file (``tora`` or ``tora.json``)."""
    fname = name if name.endswith(".json") else name + ".json"
    ref = resources.files("clflearn") / "problems" / fname
    if not ref.is_file():
        raise ProblemError(f"no bundled problem {name!r}")
    return ref


def load_bundled(name: str, **kwargs) -> ProblemSpec:
    ref = bundled_path(name)
    return load_problem(ref.read_bytes(), name=ref.name.removesuffix(".json"), **kwargs)


def problem_document(path: str) -> Tuple[dict, str]:
    """(decoded document, name) from a file path or a bundled problem name."""
    if os.path.exists(path):
        with open(path, "rb") as fh:
            raw = fh.read()
        name = os.path.basename(path).removesuffix(".json")
    else:
        try:
            ref = bundled_path(os.path.basename(path))
        except ProblemError:
            raise ProblemError(f"problem file not found: {path}") from None
        raw = ref.read_bytes()
        name = ref.name.removesuffix(".json")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"schema error: invalid JSON ({exc})") from None
    return doc, name


def load_problem_file(path: str, **kwargs) -> ProblemSpec:
    """Load from disk, falling back to the bundled problems by bare name."""
    if os.path.exists(path):
        with open(path, "rb") as fh:
            base = os.path.basename(path).removesuffix(".json")
            return load_problem(fh.read(), name=kwargs.pop("name", None) or base, **kwargs)
    stem = os.path.basename(path)
    try:
        return load_bundled(stem, **kwargs)
    except ProblemError:
        raise ProblemError(f"problem file not found: {path}") from None
