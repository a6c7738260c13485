"""Demonstrators: black-box maps from a state to one admissible input.

The default is a nonlinear MPC over forward-Euler dynamics; the first input
of the optimised sequence is returned.  Two optimisers start from u ≡ 0:

- projected gradient descent, with adjoint gradients and Armijo backtracking;
- bounded Levenberg-Marquardt on the cost written as a sum of squares, with
  forward sensitivities for the Jacobian (box input sets only).

Gradient descent is the default.  On open-loop unstable plants the cost is
badly conditioned (an early input moves the terminal state far more than a
late one) and descent stalls orders of magnitude above the optimum; "lm" or
"auto" in the MPC settings selects the second.
"""

from __future__ import annotations

import math
import subprocess
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import lsq_linear

from .system import ControlAffineSystem, MpcConfig, ProblemSpec

ARMIJO_C = 1e-4
ARMIJO_FACTOR = 0.5
LM_MAX_DAMPING = 1e20


class DemonstratorError(RuntimeError):
    pass


@dataclass(frozen=True)
class Demonstration:
    x: np.ndarray
    u: np.ndarray
    cost: float
    iterations: int = 0


def discrete_step(system: ControlAffineSystem, x, u, tau: float) -> np.ndarray:
    """x + τ f(x, u)."""
    x = np.asarray(x, dtype=float)
    return x + tau * system.dynamics(x, np.asarray(u, dtype=float))


def rollout(system: ControlAffineSystem, x0, u_seq, tau: float) -> np.ndarray:
    """States x_0..x_N under the Euler map; shape (N+1, n)."""
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    X = np.empty((u_seq.shape[0] + 1, system.n))
    X[0] = x0
    for i, u in enumerate(u_seq):
        X[i + 1] = discrete_step(system, X[i], u, tau)
    return X


def _targets(cfg: MpcConfig, n: int, t0: float) -> np.ndarray:
    """Reference states at the N+1 grid times (zeros without a reference)."""
    ref = np.zeros((cfg.N + 1, n))
    if cfg.reference is not None:
        ts = t0 + cfg.tau * np.arange(cfg.N + 1)
        for j, p in enumerate(cfg.reference):
            ref[:, j] = p(ts[:, None])
    return ref


def _weights(cfg: MpcConfig, n: int, m: int):
    Q = np.asarray(cfg.Q, dtype=float) if cfg.Q else np.ones(n)
    R = np.asarray(cfg.R, dtype=float) if cfg.R else np.ones(m)
    return Q, R


def rollout_cost(system: ControlAffineSystem, x0, u_seq, cfg: MpcConfig, t0: float = 0.0) -> float:
    """Σ_{i<N} u_iᵀRu_i + Σ_{0<i<N} e_iᵀQe_i + e_Nᵀ(N·Q)e_N, with e_i = x_i − reference."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(cfg.N, system.m)
    X = rollout(system, x0, u_seq, cfg.tau)
    Q, R = _weights(cfg, system.n, system.m)
    Err = X - _targets(cfg, system.n, t0)
    cost = float(np.sum(u_seq ** 2 * R))
    cost += float(np.sum(Err[1:-1] ** 2 * Q))
    cost += cfg.N * float(np.sum(Err[-1] ** 2 * Q))
    return cost


def cost_gradient(system: ControlAffineSystem, x0, u_seq, cfg: MpcConfig, t0: float = 0.0):
    """(cost, ∂cost/∂u) through the adjoint of the Euler rollout."""
    N, tau = cfg.N, cfg.tau
    u_seq = np.asarray(u_seq, dtype=float).reshape(N, system.m)
    X = rollout(system, x0, u_seq, tau)
    Q, R = _weights(cfg, system.n, system.m)
    Err = X - _targets(cfg, system.n, t0)
    cost = float(np.sum(u_seq ** 2 * R) + np.sum(Err[1:-1] ** 2 * Q) + N * np.sum(Err[-1] ** 2 * Q))
    grad = np.empty_like(u_seq)
    lam = 2.0 * N * Q * Err[-1]  # ∂cost/∂x_N
    eye = np.eye(system.n)
    for i in range(N - 1, -1, -1):
        G = system.input_matrix(X[i])
        grad[i] = 2.0 * R * u_seq[i] + tau * (G.T @ lam)
        if i > 0:
            J = system.state_jacobian(X[i], u_seq[i])
            lam = 2.0 * Q * Err[i] + (eye + tau * J).T @ lam
    return cost, grad


def residuals(system: ControlAffineSystem, x0, u_seq, cfg: MpcConfig, t0: float = 0.0):
    """(r, ∂r/∂u) with rollout_cost = ‖r‖²; u_seq is flattened row-major."""
    N, tau, n, m = cfg.N, cfg.tau, system.n, system.m
    u_seq = np.asarray(u_seq, dtype=float).reshape(N, m)
    Q, R = _weights(cfg, n, m)
    X = rollout(system, x0, u_seq, tau)
    w = np.tile(np.sqrt(Q), (N, 1))
    w[-1] *= np.sqrt(N)
    Err = (X - _targets(cfg, n, t0))[1:] * w
    # sensitivity of x_i to the flattened input sequence
    sens = np.zeros((N + 1, n, N * m))
    eye = np.eye(n)
    for i in range(N):
        step = eye + tau * system.state_jacobian(X[i], u_seq[i])
        sens[i + 1] = step @ sens[i]
        sens[i + 1][:, i * m:(i + 1) * m] += tau * system.input_matrix(X[i])
    r = np.concatenate([(u_seq * np.sqrt(R)).ravel(), Err.ravel()])
    Ju = np.kron(np.eye(N), np.diag(np.sqrt(R)))
    Jx = (sens[1:] * w[:, :, None]).reshape(N * n, N * m)
    return r, np.vstack([Ju, Jx])


def _levenberg_marquardt(system, x, cfg, t0, lo, hi):
    """Bounded LM: each step is a box-constrained damped linear least squares."""
    k = cfg.N * system.m
    lo, hi = np.tile(lo, cfg.N), np.tile(hi, cfg.N)
    z = np.clip(np.zeros(k), lo, hi)
    r, J = residuals(system, x, z, cfg, t0)
    cost = float(r @ r)
    damping = 1e-3 * max(float(np.max(np.sum(J * J, axis=0))), 1e-12)
    zeros = np.zeros(k)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if not (np.isfinite(cost) and np.all(np.isfinite(J))):
            raise DemonstratorError("non-finite cost or Jacobian in MPC solve")
        A = np.vstack([J, math.sqrt(damping) * np.eye(k)])
        d = lsq_linear(A, -np.concatenate([r, zeros]), bounds=(lo - z, hi - z), method="bvls").x
        predicted = cost - float(np.sum((J @ d + r) ** 2))
        trial = np.clip(z + d, lo, hi)
        r_new, J_new = residuals(system, x, trial, cfg, t0)
        new_cost = float(r_new @ r_new)
        if np.isfinite(new_cost) and new_cost < cost:
            decrease = cost - new_cost
            if decrease > 0.25 * predicted:
                damping /= 3.0
            z, r, J, cost = trial, r_new, J_new, new_cost
            if decrease <= cfg.tol * max(1.0, cost):
                break
        else:
            damping *= 4.0
            if damping > LM_MAX_DAMPING:
                break
    return z.reshape(cfg.N, system.m), cost, it


def _projected_gradient(system, x, cfg, t0):
    u = _project_rows(system, np.zeros((cfg.N, system.m)))
    cost, grad = cost_gradient(system, x, u, cfg, t0)
    step = 1.0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if not (np.isfinite(cost) and np.all(np.isfinite(grad))):
            raise DemonstratorError("non-finite cost or gradient in MPC descent")
        accepted = False
        while step > 1e-16:
            trial = _project_rows(system, u - step * grad)
            moved = trial - u
            new_cost = rollout_cost(system, x, trial, cfg, t0)
            if np.isfinite(new_cost) and new_cost <= cost + ARMIJO_C * float(np.sum(grad * moved)):
                accepted = True
                break
            step *= ARMIJO_FACTOR
        if not accepted or not np.any(moved):
            break
        decrease = cost - new_cost
        u = trial
        cost, grad = cost_gradient(system, x, u, cfg, t0)
        step = min(step / ARMIJO_FACTOR, 1e6)
        if decrease <= cfg.tol * max(1.0, abs(cost)):
            break
    return u, cost, it


def _project_rows(system: ControlAffineSystem, u_seq: np.ndarray) -> np.ndarray:
    box = system.U.box_bounds()
    if box is not None:
        return np.clip(u_seq, box[0], box[1])
    return np.array([system.U.project(u) for u in u_seq])


def demonstrate(system: ControlAffineSystem, x, cfg: MpcConfig, t0: float = 0.0) -> Demonstration:
    """Optimise the input sequence from u ≡ 0 and return u(0)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DemonstratorError("demonstrator queried at a non-finite state")
    box = system.U.box_bounds()
    method = cfg.method
    if method == "auto":
        method = "pgd" if box is None else "lm"
    if method == "lm":
        if box is None:
            raise DemonstratorError("the lm MPC method needs a box input set")
        u, cost, it = _levenberg_marquardt(system, x, cfg, t0, *box)
    else:
        u, cost, it = _projected_gradient(system, x, cfg, t0)
    u0 = u[0].copy()
    if not system.U.contains(u0):
        u0 = system.U.project(u0)
    return Demonstration(x, u0, cost, it)


class MpcDemonstrator:
    """Default oracle for a problem; funnel states carry time as the last entry."""

    def __init__(self, problem: ProblemSpec, cfg: Optional[MpcConfig] = None):
        self.system = problem.system
        self.cfg = problem.mpc if cfg is None else cfg
        self.timed = problem.certificate_dimension > problem.n
        self.n = problem.n

    def __call__(self, x) -> Demonstration:
        x = np.asarray(x, dtype=float)
        t0 = float(x[self.n]) if self.timed else 0.0
        d = demonstrate(self.system, x[: self.n], self.cfg, t0)
        return Demonstration(x, d.u, d.cost, d.iterations)


class ExternalDemonstrator:
    """Line-based oracle process: write the state, read the input back.

    Both messages are space-separated decimals on one line.
    """

    def __init__(self, command: Sequence[str], U, timeout: float = 60.0):
        self.U = U
        self.timeout = timeout
        self.proc = subprocess.Popen(
            list(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )

    def __call__(self, x) -> Demonstration:
        x = np.asarray(x, dtype=float)
        if self.proc.poll() is not None:
            raise DemonstratorError("external demonstrator exited")
        self.proc.stdin.write(" ".join(repr(float(v)) for v in x) + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise DemonstratorError("external demonstrator closed its output")
        try:
            u = np.array([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise DemonstratorError(f"bad demonstrator reply {line!r}") from exc
        if u.size != self.U.m:
            raise DemonstratorError(f"demonstrator returned {u.size} inputs, expected {self.U.m}")
        if not self.U.contains(u):
            u = self.U.project(u)
        return Demonstration(x, u, float("nan"))

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(self.timeout)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class FunctionDemonstrator:
    """Wraps a plain state → input callable (e.g. a hand-written linear law)."""

    def __init__(self, law: Callable[[np.ndarray], np.ndarray], U):
        self.law = law
        self.U = U

    def __call__(self, x) -> Demonstration:
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(self.law(x), dtype=float))
        if not self.U.contains(u):
            u = self.U.project(u)
        return Demonstration(x, u, float("nan"))
