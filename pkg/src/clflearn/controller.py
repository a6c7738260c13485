"""Feedback extraction, closed-loop simulation and sublevel-set bounds.

Laws work on batches: ``law(X, t)`` takes a (k, n) array of states and
returns a (k, m) array of inputs.  For funnel certificates the law also
reads the time t, and the decrease rate includes ∂V/∂t.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .poly import CompiledMap, Polynomial, gradient
from .system import ControlAffineSystem, ProblemSpec, SemiAlgebraicSet
from .verifier import MomentBasis, POSITIVITY, VerificationTask, solve_task

log = logging.getLogger(__name__)

SONTAG = "sontag"
MINSELECT = "minselect"
BETA_TINY = 1e-12
ORIGIN_BALL = 1e-9
DIVERGENCE = 1e6


class SimulationDivergence(RuntimeError):
    def __init__(self, message: str, trace: "SimulationTrace"):
        super().__init__(message)
        self.trace = trace


class FeedbackLaw:
    """u(x) from a certificate V: Sontag's formula or the vertex of U minimising ∇V·f."""

    def __init__(self, V: Polynomial, system: ControlAffineSystem, kind: str = MINSELECT):
        if kind not in (SONTAG, MINSELECT):
            raise ValueError(f"unknown feedback kind {kind!r}")
        self.V = V
        self.system = system
        self.kind = kind
        self.n = system.n
        self.timed = V.dimension == system.n + 1
        if V.dimension not in (system.n, system.n + 1):
            raise ValueError("certificate dimension does not match the system")
        self._grad = CompiledMap(gradient(V))
        self._vertices = system.U.vertices() if kind == MINSELECT else None

    def _lift(self, X, t) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.timed:
            return X
        return np.column_stack([X, np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))])

    def rates(self, X, t: float = 0.0):
        """(a, b) with ∇V·f(x, u) = a + b·u (a includes ∂V/∂t for funnels)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Gv = self._grad(self._lift(X, t))
        gx = Gv[:, : self.n]
        a = np.sum(gx * self.system.drift(X), axis=1)
        if self.timed:
            a = a + Gv[:, self.n]
        b = np.einsum("kn,knm->km", gx, self.system.input_matrix(X))
        return a, b

    def __call__(self, X, t: float = 0.0) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        a, b = self.rates(X, t)
        if self.kind == SONTAG:
            return _sontag(a, b, X)
        return _minselect(b, self._vertices)


def _sontag(a, b, X) -> np.ndarray:
    beta = np.sum(b * b, axis=1)
    u = np.zeros_like(b)
    ok = (beta >= BETA_TINY) & (np.linalg.norm(X, axis=1) >= ORIGIN_BALL)
    if np.any(ok):
        scale = (a[ok] + np.sqrt(a[ok] ** 2 + beta[ok] ** 2)) / beta[ok]
        u[ok] = -b[ok] * scale[:, None]
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("non-finite Sontag input")
    return u


def _minselect(b, vertices) -> np.ndarray:
    vals = b @ vertices.T
    best = vals.min(axis=1, keepdims=True)
    # vertices are sorted lexicographically; the first optimal one wins ties
    k = np.argmax(vals <= best + 1e-12, axis=1)
    return vertices[k]


def sontag_input(V: Polynomial, system: ControlAffineSystem, x, t: float = 0.0) -> np.ndarray:
    return FeedbackLaw(V, system, SONTAG)(np.asarray(x, dtype=float)[None, :], t)[0]


def minselect_input(V: Polynomial, system: ControlAffineSystem, x, t: float = 0.0) -> np.ndarray:
    return FeedbackLaw(V, system, MINSELECT)(np.asarray(x, dtype=float)[None, :], t)[0]


@dataclass
class SimulationTrace:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    V: np.ndarray
    diverged: bool = False

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        m = self.inputs.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + ["V"])
            for k in range(len(self.times)):
                w.writerow([repr(float(self.times[k]))] + [repr(float(v)) for v in self.states[k]]
                           + [repr(float(v)) for v in self.inputs[k]] + [repr(float(self.V[k]))])


def _certificate_values(V: Optional[Polynomial], X, t, n) -> np.ndarray:
    if V is None:
        return np.full(X.shape[0], np.nan)
    if V.dimension == n + 1:
        return V(np.column_stack([X, np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))]))
    return V(X)


def simulate_batch(system: ControlAffineSystem, law, X0, duration: float, dt: float, *,
                   max_step: Optional[float] = None, t0: float = 0.0,
                   V: Optional[Polynomial] = None) -> List[SimulationTrace]:
    """RK4 from each row of X0, recording every dt; the input is re-evaluated at each stage.

    ``max_step`` splits each recording interval into equal sub-steps no longer
    than it.  A trace whose state norm exceeds 1e6 stops there and is flagged.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    X = np.atleast_2d(np.asarray(X0, dtype=float)).copy()
    k, n = X.shape
    if V is None and isinstance(law, FeedbackLaw):
        V = law.V
    steps = int(round(duration / dt))
    sub = 1 if max_step is None else max(1, int(math.ceil(dt / max_step - 1e-12)))
    h = dt / sub
    times = t0 + dt * np.arange(steps + 1)
    states = np.full((steps + 1, k, n), np.nan)
    inputs = np.full((steps + 1, k, system.m), np.nan)
    alive = np.ones(k, dtype=bool)
    last = np.full(k, steps)

    def f(x, t):
        return system.dynamics(x, law(x, t))

    states[0] = X
    for s in range(steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x = X[idx]
        inputs[s, idx] = law(x, times[s])
        for j in range(sub):
            t = times[s] + j * h
            k1 = f(x, t)
            k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        X[idx] = x
        states[s + 1, idx] = x
        bad = ~np.all(np.isfinite(x), axis=1) | (np.linalg.norm(np.nan_to_num(x, nan=np.inf), axis=1) > DIVERGENCE)
        if np.any(bad):
            alive[idx[bad]] = False
            last[idx[bad]] = s + 1
    idx = np.flatnonzero(alive)
    if idx.size:
        inputs[steps, idx] = law(X[idx], times[steps])
    traces = []
    for i in range(k):
        L = last[i] + 1
        S = states[:L, i]
        vals = _certificate_values(V, S, times[:L], n)
        traces.append(SimulationTrace(times[:L].copy(), S.copy(), inputs[:L, i].copy(), vals, not alive[i]))
    return traces


def simulate(system: ControlAffineSystem, law, x0, duration: float, dt: float, *,
             max_step: Optional[float] = None, t0: float = 0.0, V: Optional[Polynomial] = None,
             raise_on_divergence: bool = True) -> SimulationTrace:
    tr = simulate_batch(system, law, np.asarray(x0, dtype=float)[None, :], duration, dt,
                        max_step=max_step, t0=t0, V=V)[0]
    if tr.diverged and raise_on_divergence:
        raise SimulationDivergence(f"state norm exceeded {DIVERGENCE:g} at t={tr.times[-1]:g}", tr)
    return tr


def decrease_audit(trace: SimulationTrace, V: Optional[Polynomial] = None,
                   exclude: Optional[SemiAlgebraicSet] = None, tol: float = 1e-9) -> dict:
    """Count sample-to-sample V increases, skipping samples in ``exclude`` or at the origin."""
    vals = trace.V
    if V is not None:
        n = trace.states.shape[1]
        vals = _certificate_values(V, trace.states, trace.times, n)
    X = trace.states[:-1]
    keep = np.linalg.norm(X, axis=1) > ORIGIN_BALL
    if exclude is not None:
        keep &= ~exclude.contains(X)
    dv = np.diff(vals)[keep]
    pairs = int(dv.size)
    decreasing = int(np.count_nonzero(dv < 0))
    increases = int(np.count_nonzero(dv > tol))
    return {
        "pairs": pairs,
        "decreasing": decreasing,
        "fraction": 1.0 if pairs == 0 else decreasing / pairs,
        "increases": increases,
        "max_increase": float(dv.max()) if pairs else 0.0,
        "passed": increases == 0,
    }


def _sublevel_escapes(V: Polynomial, p: Polynomial, beta: float, D: int, eps: float) -> bool:
    """True unless the relaxation proves {V ≤ β, p ≥ ε} empty."""
    fr = MomentBasis(V.dimension, D)
    task = VerificationTask(POSITIVITY, "sublevel", fr, [], [], [beta - V, p - eps], False, nx=V.dimension)
    res = solve_task(task)
    return not res.passed


def beta_star(V: Polynomial, S: SemiAlgebraicSet, D: Optional[int] = None, *, eps: float = 1e-6,
              rel_tol: float = 1e-3, beta_hi: float = 1.0, max_doublings: int = 40) -> float:
    """Largest β (to relative tolerance) with {V ≤ β} ⊆ S certified by moment relaxations."""
    if D is None:
        D = max(1, math.ceil(max([V.degree] + [p.degree for p in S.constraints]) / 2))

    def contained(beta: float) -> bool:
        return not any(_sublevel_escapes(V, p, beta, D, eps) for p in S.constraints)

    lo, hi = 0.0, float(beta_hi)
    doublings = 0
    while contained(hi):
        lo = hi
        hi *= 2.0
        doublings += 1
        if doublings > max_doublings:
            return lo
    if lo == 0.0:
        probe = hi * 1e-9
        if not contained(probe):
            log.warning("no sublevel set certified inside S; returning 0")
            return 0.0
        lo = probe
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if contained(mid):
            lo = mid
        else:
            hi = mid
    return lo


def problem_law(problem: ProblemSpec, V: Polynomial, kind: str = MINSELECT) -> FeedbackLaw:
    return FeedbackLaw(V, problem.system, kind)
