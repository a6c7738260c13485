"""Learner/verifier/demonstrator loop.

Each iteration proposes a candidate, verifies it, and turns the first
counterexample into cuts: a positivity counterexample gives one row with no
demonstration, a decrease counterexample asks the demonstrator for an input
at the (projected) state and gives the decrease row, plus the positivity row
for stabilization specifications.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from . import learner as L
from .demonstrator import Demonstration, MpcDemonstrator
from .optim import EPS_STRICT, SDP_TOL
from .poly import Polynomial
from .system import ProblemSpec, is_stabilization, load_problem, problem_to_dict
from .verifier import (
    FIRST,
    POSITIVITY,
    MomentCounterexample,
    MomentFrame,
    lift_functionals,
    point_functionals,
    verify,
)

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1

EMPTY_REGION = "EmptyRegion"
VOLUME_EXHAUSTED = "VolumeExhausted"
ITERATION_CAP = "IterationCap"
NUMERICAL_DEADLOCK = "NumericalDeadlock"


class CheckpointError(ValueError):
    pass


class EliminationError(AssertionError):
    """A refuted candidate survived its own cuts."""


@dataclass
class SynthesisOptions:
    strategy: str = L.MVE
    mode: str = FIRST
    formulation: str = "vertex"
    tolerance: float = SDP_TOL
    max_iterations: Optional[int] = None
    log_path: Optional[str] = None
    checkpoint_path: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Observation:
    kind: str
    iteration: int
    task: str
    x: List[float]
    exact: bool
    gamma: float
    u: Optional[List[float]] = None
    spurious: bool = False


@dataclass
class LoopStats:
    iterations: int = 0
    demonstrations: int = 0
    verifier_time: float = 0.0
    demonstrator_time: float = 0.0
    total_time: float = 0.0
    log_volumes: List[float] = field(default_factory=list)
    termination: Optional[str] = None
    positivity_cuts: int = 0
    decrease_cuts: int = 0
    spurious: int = 0
    collapses: int = 0
    eliminations_checked: int = 0


@dataclass
class Certificate:
    c: np.ndarray
    V: Polynomial
    transcript: List[dict]


@dataclass
class Failure:
    cause: str
    note: str = ""


@dataclass
class SynthesisResult:
    outcome: Union[Certificate, Failure]
    stats: LoopStats
    observations: List[Observation]

    @property
    def ok(self) -> bool:
        return isinstance(self.outcome, Certificate)

    @property
    def status(self) -> str:
        return "certificate" if self.ok else "failure"

    def to_dict(self) -> dict:
        doc = {"schema": 1, "status": self.status, "stats": asdict(self.stats)}
        if self.ok:
            doc["clf"] = self.outcome.V.to_records()
            doc["coefficients"] = [float(v) for v in self.outcome.c]
            doc["transcript"] = self.outcome.transcript
        else:
            doc["cause"] = self.outcome.cause
            doc["note"] = self.outcome.note
        return doc


class SynthesisState:
    """Everything the loop needs between iterations (and in a checkpoint)."""

    def __init__(self, problem: ProblemSpec, options: SynthesisOptions,
                 demonstrator: Optional[Callable[[np.ndarray], Demonstration]] = None):
        self.problem = problem
        self.options = options
        self.frame = MomentFrame(problem, formulation=options.formulation)
        self.demonstrator = demonstrator if demonstrator is not None else MpcDemonstrator(problem)
        self.region = L.init_region(problem.basis, problem.Delta)
        self.ellipsoid: Optional[L.InscribedEllipsoid] = None
        self.iteration = 0
        self.stats = LoopStats()
        self.observations: List[Observation] = []
        self.result: Optional[SynthesisResult] = None
        self.candidate: Optional[np.ndarray] = None
        self.bound = L.iteration_bound(self.region.dimension, problem.Delta, problem.delta)

    @property
    def cap(self) -> int:
        if self.options.max_iterations is not None:
            return self.options.max_iterations
        return self.bound + self.region.collapses

    def _finish(self, outcome) -> None:
        self.stats.termination = "certificate" if isinstance(outcome, Certificate) else outcome.cause
        self.result = SynthesisResult(outcome, self.stats, self.observations)

    def _log(self, record: dict) -> None:
        if self.options.log_path:
            with open(self.options.log_path, "a") as fh:
                fh.write(json.dumps(record) + "\n")


def start(problem: ProblemSpec, options: Optional[SynthesisOptions] = None, demonstrator=None) -> SynthesisState:
    return SynthesisState(problem, options or SynthesisOptions(), demonstrator)


def _spurious_flag(state: SynthesisState) -> str:
    return "possibly spurious" if state.stats.spurious else ""


def _propose(state: SynthesisState):
    """Candidate and ellipsoid, collapsing degenerate directions first."""
    region = state.region
    while True:
        c, ell = L.propose_candidate(region, state.options.strategy, state.ellipsoid)
        if ell is None and region.dimension > 0:
            ell = L.mve(region, state.ellipsoid)
        if ell is None:
            return c, None
        thin = float(np.linalg.eigvalsh(ell.shape).min()) < L.THIN
        if thin and region.collapses < region.r and region.dimension > 1:
            k = L.collapse_thin_directions(region, ell)
            if k:
                state.stats.collapses += k
                state.ellipsoid = None
                continue
        return c, ell


def _cut_functionals(state: SynthesisState, cex: MomentCounterexample):
    if cex.point is not None:
        return point_functionals(state.frame, cex.point), np.asarray(cex.point)
    return lift_functionals(state.frame, cex.y), np.asarray(cex.x)


def step(state: SynthesisState) -> SynthesisState:
    """One propose/verify/update round; a finished state is returned unchanged."""
    if state.result is not None:
        return state
    t_start = time.perf_counter()
    problem, region = state.problem, state.region
    if state.iteration >= state.cap:
        state._finish(Failure(ITERATION_CAP, f"reached {state.cap} iterations"))
        return state
    try:
        c, ell = _propose(state)
    except L.EmptyRegion as exc:
        state._finish(Failure(EMPTY_REGION, " ".join(filter(None, [str(exc), _spurious_flag(state)]))))
        return state
    except L.LearnerTrouble as exc:
        state._finish(Failure(NUMERICAL_DEADLOCK, str(exc)))
        return state
    if ell is not None:
        if L.should_terminate(ell, problem.delta):
            state._finish(Failure(VOLUME_EXHAUSTED, f"log-volume {ell.log_volume:.3f}"))
            return state
        state.ellipsoid = ell
    state.iteration += 1
    state.stats.iterations = state.iteration
    state.candidate = c
    log_vol = None if ell is None else float(ell.log_volume)
    state.stats.log_volumes.append(log_vol if log_vol is not None else float("nan"))

    t0 = time.perf_counter()
    report = verify(state.frame, c, problem.spec, state.options.mode, state.options.tolerance)
    state.stats.verifier_time += time.perf_counter() - t0
    if report.verified:
        V = state.frame.certificate(c)
        state._log({"iteration": state.iteration, "kind": "verified", "log_vol_E": log_vol})
        state._finish(Certificate(np.asarray(c), V, report.transcript))
        state.stats.total_time += time.perf_counter() - t_start
        return state
    cex = report.counterexample
    if cex is None:
        state._finish(Failure(NUMERICAL_DEADLOCK, "verifier failed without a usable moment solution"))
        return state
    if cex.spurious:
        state.stats.spurious += 1
    (g, lie), x = _cut_functionals(state, cex)
    offset = state.frame.offset
    u = None
    added = []
    if cex.kind == POSITIVITY:
        task = next(r.task for r in report.results if r.task.id == cex.task_id)
        ct = L.add_positivity_cut(region, g, offset, sign=task.sign, refuted=c, iteration=state.iteration)
        added = [ct] if ct is not None else []
        state.stats.positivity_cuts += len(added)
    else:
        t0 = time.perf_counter()
        demo = state.demonstrator(x)
        state.stats.demonstrator_time += time.perf_counter() - t0
        state.stats.demonstrations += 1
        u = np.asarray(demo.u, dtype=float)
        if not problem.system.U.contains(u):
            raise ValueError("demonstrator returned an input outside U")
        dec = lie[:, 0] + lie[:, 1:] @ u
        added = L.add_decrease_cut(region, g, dec, offset, refuted=c, iteration=state.iteration,
                                   with_positivity=is_stabilization(problem.spec))
        state.stats.decrease_cuts += len(added)
    obs = Observation(cex.kind, state.iteration, cex.task_id, [float(v) for v in x], cex.point is not None,
                      float(cex.gamma), None if u is None else [float(v) for v in u], cex.spurious)
    state.observations.append(obs)
    state._log({
        "iteration": state.iteration,
        "kind": cex.kind,
        "task": cex.task_id,
        "gamma": float(cex.gamma),
        "log_vol_E": log_vol,
        "demo": obs.u,
        "exact": obs.exact,
        "rows": len(region.cuts),
    })
    # the refuted candidate must now violate some row
    state.stats.eliminations_checked += 1
    if region.worst_violation(c) < EPS_STRICT / 2:
        if not added and obs.exact:
            # the violated condition does not depend on c, so every candidate fails it
            state._finish(Failure(EMPTY_REGION, "exact counterexample violated by every coefficient vector"))
            return state
        if not added:
            state._finish(Failure(NUMERICAL_DEADLOCK, "degenerate counterexample (zero functional)"))
            return state
        raise EliminationError(f"candidate survived its cuts at iteration {state.iteration}")
    L.prune(region)
    state.stats.total_time += time.perf_counter() - t_start
    if state.options.checkpoint_path:
        save_checkpoint(state, state.options.checkpoint_path)
    return state


def run(state: SynthesisState) -> SynthesisResult:
    t0 = time.perf_counter()
    while state.result is None:
        step(state)
    state.stats.total_time = max(state.stats.total_time, time.perf_counter() - t0)
    return state.result


def synthesize(problem: ProblemSpec, options: Optional[SynthesisOptions] = None,
               demonstrator=None) -> SynthesisResult:
    return run(start(problem, options, demonstrator))


# ---------------------------------------------------------------------------
# checkpoints


def checkpoint(state: SynthesisState) -> dict:
    ell = state.ellipsoid
    return {
        "schema": CHECKPOINT_SCHEMA,
        "kind": "checkpoint",
        "problem": problem_to_dict(state.problem),
        "options": state.options.to_dict(),
        "region": state.region.to_dict(),
        "ellipsoid": None if ell is None else {
            "center": ell.center.tolist(), "shape": ell.shape.tolist(), "log_volume": ell.log_volume,
        },
        "iteration": state.iteration,
        "stats": asdict(state.stats),
        "observations": [asdict(o) for o in state.observations],
        "certificate": None if state.result is None or not state.result.ok else {
            "c": [float(v) for v in state.result.outcome.c], "transcript": state.result.outcome.transcript,
        },
        "failure": None if state.result is None or state.result.ok else asdict(state.result.outcome),
    }


def save_checkpoint(state: SynthesisState, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint(state), fh)


def restore(doc: Union[dict, str, bytes], demonstrator=None) -> SynthesisState:
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("kind") != "checkpoint":
        raise CheckpointError("not a checkpoint")
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"checkpoint schema {doc.get('schema')} is not supported")
    try:
        problem = load_problem(doc["problem"], validate=False)
        state = SynthesisState(problem, SynthesisOptions(**doc["options"]), demonstrator)
        state.region = L.CandidateRegion.from_dict(doc["region"])
        e = doc["ellipsoid"]
        if e is not None:
            state.ellipsoid = L.InscribedEllipsoid(
                np.array(e["center"], dtype=float), np.array(e["shape"], dtype=float), float(e["log_volume"])
            )
        state.iteration = int(doc["iteration"])
        state.stats = LoopStats(**doc["stats"])
        state.observations = [Observation(**o) for o in doc["observations"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if doc.get("certificate") is not None:
        c = np.array(doc["certificate"]["c"], dtype=float)
        state._finish(Certificate(c, state.frame.certificate(c), doc["certificate"]["transcript"]))
    elif doc.get("failure") is not None:
        state._finish(Failure(**doc["failure"]))
    return state


def resume(doc, demonstrator=None) -> SynthesisResult:
    return run(restore(doc, demonstrator))
