"""Cutting-plane learner over certificate coefficients.

The compatible coefficients form a polytope: the box (−Δ, Δ)^r, an affine
subspace of equalities, and one strict half-space per observation.  Strict
inequalities are stored closed with a margin of ``EPS_STRICT`` on unit rows.
All geometry runs in reduced coordinates z with c = c0 + N z, where the
columns of N span the null space of the equalities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from .optim import (
    EPS_STRICT,
    LinearProgram,
    Status,
    analytic_center,
    chebyshev_center,
    max_volume_ellipsoid,
    solve_lp,
    unit_ball_log_volume,
)
from .poly import Polynomial

MVE = "mve"
CHEBYSHEV = "cheby"
ANALYTIC = "analytic"
STRATEGIES = (MVE, CHEBYSHEV, ANALYTIC)

INITIAL = "initial"
POSITIVITY_CUT = "positivity"
DECREASE_CUT = "decrease"
COLLAPSE = "collapse"

THIN = 1e-10
PRUNE_FACTOR = 50


class EmptyRegion(RuntimeError):
    """No coefficient vector is compatible with the observations."""


class LearnerTrouble(RuntimeError):
    """The centre computation failed numerically."""


@dataclass
class Cut:
    a: np.ndarray  # unit normal in coefficient space
    b: float  # closed row a·c ≥ b (margin already included)
    tag: str
    iteration: int = -1

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b, "tag": self.tag, "iteration": self.iteration}

    @classmethod
    def from_dict(cls, d: dict) -> "Cut":
        return cls(np.array(d["a"], dtype=float), float(d["b"]), d["tag"], int(d.get("iteration", -1)))


@dataclass
class InscribedEllipsoid:
    center: np.ndarray  # reduced coordinates
    shape: np.ndarray
    log_volume: float

    @property
    def dimension(self) -> int:
        return self.center.size


@dataclass
class CandidateRegion:
    r: int
    Delta: float
    eq_A: np.ndarray
    eq_b: np.ndarray
    cuts: List[Cut] = field(default_factory=list)
    collapses: int = 0
    c0: np.ndarray = field(init=False)
    N: np.ndarray = field(init=False)

    def __post_init__(self):
        self.refactor()

    def refactor(self) -> None:
        """Recompute c0 and N from the current equalities."""
        if self.eq_A.shape[0] == 0:
            self.c0 = np.zeros(self.r)
            self.N = np.eye(self.r)
            return
        self.c0 = np.linalg.lstsq(self.eq_A, self.eq_b, rcond=None)[0]
        self.N = null_space(self.eq_A)

    @property
    def dimension(self) -> int:
        return self.N.shape[1]

    def coefficients(self, z) -> np.ndarray:
        return self.c0 + self.N @ np.asarray(z, dtype=float)

    def reduce(self, c) -> np.ndarray:
        return self.N.T @ (np.asarray(c, dtype=float) - self.c0)

    def rows(self) -> Tuple[np.ndarray, np.ndarray]:
        """All closed rows A c ≥ b in coefficient space, box first."""
        I = np.eye(self.r)
        A = [I, -I]
        b = [np.full(self.r, -self.Delta), np.full(self.r, -self.Delta)]
        if self.cuts:
            A.append(np.array([ct.a for ct in self.cuts]))
            b.append(np.array([ct.b for ct in self.cuts]))
        return np.vstack(A), np.concatenate(b)

    def reduced_rows(self) -> Tuple[np.ndarray, np.ndarray]:
        A, b = self.rows()
        Az = A @ self.N
        bz = b - A @ self.c0
        keep = np.linalg.norm(Az, axis=1) > 1e-12
        if np.any(~keep) and np.any(bz[~keep] > 1e-12):
            raise EmptyRegion("a cut is violated on the whole affine hull")
        return Az[keep], bz[keep]

    def contains(self, c, slack: float = 0.0) -> bool:
        c = np.asarray(c, dtype=float)
        A, b = self.rows()
        if np.any(A @ c < b - slack):
            return False
        if self.eq_A.shape[0]:
            return bool(np.allclose(self.eq_A @ c, self.eq_b, atol=1e-9))
        return True

    def worst_violation(self, c) -> float:
        """max over rows of b − a·c (positive when c is outside)."""
        A, b = self.rows()
        return float(np.max(b - A @ np.asarray(c, dtype=float)))

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "Delta": self.Delta,
            "eq_A": self.eq_A.tolist(),
            "eq_b": self.eq_b.tolist(),
            "cuts": [ct.to_dict() for ct in self.cuts],
            "collapses": self.collapses,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateRegion":
        r = int(d["r"])
        reg = cls(
            r,
            float(d["Delta"]),
            np.array(d["eq_A"], dtype=float).reshape(-1, r),
            np.array(d["eq_b"], dtype=float),
        )
        reg.cuts = [Cut.from_dict(x) for x in d["cuts"]]
        reg.collapses = int(d.get("collapses", 0))
        return reg


def init_region(basis: Sequence[Polynomial], Delta: float) -> CandidateRegion:
    """Box (−Δ, Δ)^r with Σ c_k g_k(0) = 0, affine hull factored out."""
    if Delta <= 0:
        raise ValueError("Δ must be positive")
    basis = list(basis)
    r = len(basis)
    g0 = np.array([g(np.zeros(g.dimension)) for g in basis])
    if np.any(g0 != 0.0):
        eq_A, eq_b = g0[None, :], np.zeros(1)
    else:
        eq_A, eq_b = np.zeros((0, r)), np.zeros(0)
    return CandidateRegion(r, float(Delta), eq_A, eq_b)


def _add(region: CandidateRegion, a, b: float, tag: str, refuted=None, iteration: int = -1) -> Optional[Cut]:
    a = np.asarray(a, dtype=float)
    nrm = float(np.linalg.norm(a))
    if nrm <= 1e-14 or not math.isfinite(nrm):
        return None
    a = a / nrm
    b = float(b) / nrm
    if refuted is not None:
        # a relaxed functional may leave the refuted point on the feasible side by solver noise
        b = max(b, float(a @ np.asarray(refuted, dtype=float)))
    b += EPS_STRICT
    for ct in region.cuts:
        if np.allclose(ct.a, a, rtol=0, atol=1e-12) and abs(ct.b - b) <= 1e-12:
            return None
    cut = Cut(a, b, tag, iteration)
    region.cuts.append(cut)
    return cut


def add_positivity_cut(region: CandidateRegion, functional, constant: float = 0.0, *, sign: int = +1,
                       refuted=None, iteration: int = -1) -> Optional[Cut]:
    """sign·(functional·c + constant) > 0; returns the stored row or None when skipped."""
    f = np.asarray(functional, dtype=float) * sign
    return _add(region, f, -sign * constant, POSITIVITY_CUT, refuted, iteration)


def add_decrease_cut(region: CandidateRegion, positivity, decrease, constant: float = 0.0, *,
                     refuted=None, iteration: int = -1, with_positivity: bool = True) -> List[Cut]:
    """Rows H1: positivity·c + constant > 0 and H2: decrease·c < 0."""
    out = []
    if with_positivity and positivity is not None:
        ct = _add(region, positivity, -constant, DECREASE_CUT, None, iteration)
        if ct is not None:
            out.append(ct)
    ct = _add(region, -np.asarray(decrease, dtype=float), 0.0, DECREASE_CUT, refuted, iteration)
    if ct is not None:
        out.append(ct)
    return out


def chebyshev(region: CandidateRegion) -> Tuple[np.ndarray, float]:
    Az, bz = region.reduced_rows()
    out, z, radius = chebyshev_center(Az, bz)
    if out.status is Status.INFEASIBLE or (out.ok and radius <= 0.0):
        raise EmptyRegion("candidate region is empty")
    if not out.ok:
        raise LearnerTrouble(f"Chebyshev LP failed: {out.status.value}")
    return z, radius


def mve(region: CandidateRegion, previous: Optional[InscribedEllipsoid] = None) -> InscribedEllipsoid:
    Az, bz = region.reduced_rows()
    d = Az.shape[1]
    z0, radius = chebyshev(region)
    anchor, frame = z0, np.eye(d) * max(radius, 1e-12)
    if previous is not None and previous.dimension == d:
        anchor, frame = previous.center, previous.shape
    out, center, shape = max_volume_ellipsoid(Az, bz, anchor=anchor, frame=frame)
    if not out.ok and previous is not None:
        out, center, shape = max_volume_ellipsoid(Az, bz, anchor=z0, frame=np.eye(d) * max(radius, 1e-12))
    if out.status is Status.INFEASIBLE:
        raise EmptyRegion("candidate region is empty")
    if center is None or shape is None:
        raise LearnerTrouble(f"MVE failed: {out.info.get('message', out.status.value)}")
    sign, logdet = np.linalg.slogdet(shape)
    logdet = logdet if sign > 0 else -math.inf
    return InscribedEllipsoid(center, shape, unit_ball_log_volume(d) + logdet)


def collapse_thin_directions(region: CandidateRegion, ell: InscribedEllipsoid, thin: float = THIN) -> int:
    """Freeze reduced directions along which the ellipsoid is degenerate; returns how many."""
    w, U = np.linalg.eigh(ell.shape)
    idx = [k for k in range(w.size) if w[k] < thin]
    if not idx or len(idx) == w.size:
        return 0
    c_mid = region.coefficients(ell.center)
    rows = (region.N @ U[:, idx]).T
    region.eq_A = np.vstack([region.eq_A, rows])
    region.eq_b = np.concatenate([region.eq_b, rows @ c_mid])
    region.refactor()
    region.collapses += len(idx)
    return len(idx)


def prune(region: CandidateRegion, factor: int = PRUNE_FACTOR) -> int:
    """Drop cuts implied by the others once there are more than factor·r of them."""
    if len(region.cuts) <= factor * region.r:
        return 0
    removed = 0
    k = 0
    while k < len(region.cuts):
        ct = region.cuts[k]
        others = region.cuts[:k] + region.cuts[k + 1:]
        I = np.eye(region.r)
        G = np.vstack([I, -I] + ([np.array([o.a for o in others])] if others else []))
        h = np.concatenate(
            [np.full(2 * region.r, -region.Delta)] + ([np.array([o.b for o in others])] if others else [])
        )
        E = region.eq_A if region.eq_A.shape[0] else None
        d = region.eq_b if region.eq_A.shape[0] else None
        out = solve_lp(LinearProgram(-ct.a, G, h, E, d))
        if out.ok and -out.objective >= ct.b - 1e-12:
            region.cuts.pop(k)
            removed += 1
        else:
            k += 1
    return removed


def propose_candidate(region: CandidateRegion, strategy: str = MVE,
                      previous: Optional[InscribedEllipsoid] = None) -> Tuple[np.ndarray, Optional[InscribedEllipsoid]]:
    """Next candidate c and, for the MVE strategy, the inscribed ellipsoid."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if region.dimension == 0:
        c = region.c0
        if not region.contains(c):
            raise EmptyRegion("affine hull is a point outside the cuts")
        return c, None
    if strategy == MVE:
        ell = mve(region, previous)
        return region.coefficients(ell.center), ell
    z, _ = chebyshev(region)
    if strategy == CHEBYSHEV:
        return region.coefficients(z), None
    Az, bz = region.reduced_rows()
    try:
        z = analytic_center(Az, bz, start=z)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise LearnerTrouble(f"analytic centre failed: {exc}") from exc
    return region.coefficients(z), None


def should_terminate(ell: InscribedEllipsoid, delta: float) -> bool:
    d = ell.dimension
    return ell.log_volume < unit_ball_log_volume(d) + d * math.log(delta)


def iteration_bound(d: int, Delta: float, delta: float) -> int:
    if not Delta >= delta > 0:
        raise ValueError("need Δ ≥ δ > 0")
    return int(math.ceil(d * (math.log(Delta) - math.log(delta)) / math.log(9.0 / 8.0) - 1e-12))
