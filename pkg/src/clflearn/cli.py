"""Command-line interface: ``synth``, ``verify``, ``simulate`` and ``bench``.

Exit codes: 0 success, 1 usage or internal error, 2 negative verdict.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from typing import List, Optional

import numpy as np

from . import learner as L
from .controller import MINSELECT, SONTAG, FeedbackLaw, decrease_audit, simulate_batch
from .demonstrator import ExternalDemonstrator
from .poly import Polynomial
from .synthesis import SynthesisOptions, synthesize
from .system import Funnel, ProblemError, ProblemSpec, load_problem, problem_document
from .verifier import FIRST, MAX_VIOLATION, DegreeError, MomentFrame, verify

log = logging.getLogger("clflearn")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NEGATIVE = 2
SCHEMA = 1


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _load(args) -> ProblemSpec:
    doc, name = problem_document(args.problem)
    doc = dict(doc)
    if getattr(args, "basis", None):
        doc["basis"] = args.basis
        if args.degree is None:
            doc.pop("D", None)
    if getattr(args, "degree", None) is not None:
        doc["D"] = args.degree
    if getattr(args, "Delta", None) is not None:
        doc["Delta"] = args.Delta
    if getattr(args, "delta", None) is not None:
        doc["delta"] = args.delta
    return load_problem(doc, name=name)


def _write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _read_certificate(path: str, problem: ProblemSpec) -> Polynomial:
    """A certificate file holds either ``clf`` (the full polynomial) or ``coefficients`` over the basis."""
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise UsageError("certificate file must hold a JSON object")
    dim = problem.certificate_dimension
    if "clf" in doc:
        recs = doc["clf"]
        for rec in recs:
            if len(rec["exp"]) != dim:
                raise UsageError(f"certificate has dimension {len(rec['exp'])}, problem needs {dim}")
        return Polynomial.from_records(recs, dim)
    if "coefficients" in doc:
        c = np.asarray(doc["coefficients"], dtype=float)
        if c.size != problem.r:
            raise UsageError(f"{c.size} coefficients for a basis of size {problem.r}")
        return MomentFrame(problem).certificate(c)
    raise UsageError("certificate file needs a 'clf' or 'coefficients' field")


def _parse_vector(text: str) -> np.ndarray:
    parts = [p for p in text.replace(",", " ").split() if p]
    return np.array([float(p) for p in parts])


def _demonstrator(args, problem: ProblemSpec):
    if args.demonstrator == "mpc":
        return None
    if not args.demonstrator_cmd:
        raise UsageError("--demonstrator external needs --demonstrator-cmd")
    return ExternalDemonstrator(args.demonstrator_cmd.split(), problem.system.U)


def _options(args, out: str) -> SynthesisOptions:
    log_path = os.path.join(out, "runlog.jsonl")
    if os.path.exists(log_path):
        os.remove(log_path)
    return SynthesisOptions(
        strategy=args.strategy,
        mode=MAX_VIOLATION if args.ce_mode == "max" else FIRST,
        formulation=args.formulation,
        max_iterations=args.max_iterations,
        log_path=log_path,
        checkpoint_path=os.path.join(out, "checkpoint.json") if args.checkpoint else None,
    )


def _config_echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    problem = _load(args)
    out = _out_dir(args)
    demo = _demonstrator(args, problem)
    try:
        result = synthesize(problem, _options(args, out), demo)
    finally:
        if demo is not None:
            demo.close()
    doc = result.to_dict()
    doc["problem"] = problem.name
    doc["config"] = _config_echo(args)
    _write_json(os.path.join(out, "result.json"), doc)
    s = result.stats
    print(f"{result.status}: {problem.name} iterations={s.iterations} demonstrations={s.demonstrations} "
          f"verifier={s.verifier_time:.1f}s total={s.total_time:.1f}s")
    if result.ok:
        print(f"V = {result.outcome.V}")
        return EXIT_OK
    print(f"cause: {result.outcome.cause} {result.outcome.note}".rstrip())
    return EXIT_NEGATIVE


def cmd_verify(args) -> int:
    problem = _load(args)
    V = _read_certificate(args.certificate, problem)
    frame = MomentFrame(problem, formulation=args.formulation)
    t0 = time.perf_counter()
    report = verify(frame, None, problem.spec, MAX_VIOLATION if args.ce_mode == "max" else FIRST, V=V)
    elapsed = time.perf_counter() - t0
    out = _out_dir(args)
    doc = {"schema": SCHEMA, "verified": report.verified, "transcript": report.transcript}
    if report.verified:
        _write_json(os.path.join(out, "verification.json"), doc)
        print(f"verified ({elapsed:.1f}s)")
        return EXIT_OK
    cex = report.counterexample
    if cex is None:
        doc["error"] = "solver trouble without a usable moment solution"
        _write_json(os.path.join(out, "verification.json"), doc)
        print("verification inconclusive: numerical trouble")
        return EXIT_ERROR
    x = cex.point if cex.point is not None else cex.x
    doc["counterexample"] = {
        "kind": cex.kind,
        "task": cex.task_id,
        "x": [float(v) for v in x],
        "gamma": float(cex.gamma),
        "exact": cex.point is not None,
    }
    _write_json(os.path.join(out, "verification.json"), doc)
    print(json.dumps(doc["counterexample"]))
    return EXIT_NEGATIVE


def _initial_states(args, problem: ProblemSpec) -> np.ndarray:
    rows: List[np.ndarray] = [_parse_vector(s) for s in (args.x0 or [])]
    if args.samples:
        spec = problem.spec
        if not hasattr(spec, "I"):
            raise UsageError("--samples needs a specification with an initial set")
        rng = np.random.default_rng(args.seed)
        rows.extend(spec.I.sample(rng, args.samples))
    if not rows:
        raise UsageError("no initial states given (use --x0 or --samples)")
    X0 = np.array(rows, dtype=float)
    if X0.ndim != 2 or X0.shape[1] != problem.n:
        raise UsageError(f"initial states must have {problem.n} entries")
    return X0


def cmd_simulate(args) -> int:
    problem = _load(args)
    V = _read_certificate(args.certificate, problem)
    X0 = _initial_states(args, problem)
    spec = problem.spec
    law = FeedbackLaw(V, problem.system, args.law)
    duration = args.duration
    if duration is None:
        duration = spec.horizon if isinstance(spec, Funnel) else 60.0
    traces = simulate_batch(problem.system, law, X0, duration, args.dt, max_step=args.max_step)
    out = _out_dir(args)
    S = getattr(spec, "S", None)
    T = getattr(spec, "T", None)
    summary = []
    for k, tr in enumerate(traces):
        path = os.path.join(out, f"trace_{k:03d}.csv")
        tr.to_csv(path)
        X = tr.states
        if T is not None:
            hit = T.contains(X)
        else:
            hit = np.linalg.norm(X, axis=1) <= args.target_radius
        if isinstance(spec, Funnel):
            reached = bool(hit[-1]) and not tr.diverged
        else:
            reached = bool(np.any(hit))
        first = int(np.argmax(hit)) if np.any(hit) else None
        safe = bool(S.contains(X).all()) if S is not None else not tr.diverged
        audit = decrease_audit(tr, exclude=T)
        summary.append({
            "x0": [float(v) for v in X0[k]],
            "trace": os.path.basename(path),
            "in_scope": bool(S.contains(X0[k:k + 1])[0]) if S is not None else True,
            "diverged": bool(tr.diverged),
            "stayed_safe": safe and not tr.diverged,
            "reached_target": reached,
            "time_to_target": None if first is None else float(tr.times[first]),
            "V_increases": audit["increases"],
            "max_V_increase": audit["max_increase"],
        })
    _write_json(os.path.join(out, "summary.json"), {"schema": SCHEMA, "traces": summary})
    for row in summary:
        print(f"x0={row['x0']} safe={row['stayed_safe']} reached={row['reached_target']} "
              f"t={row['time_to_target']} V_increases={row['V_increases']}")
    return EXIT_OK


def _read_manifest(path: str) -> List[dict]:
    if not os.path.exists(path):
        raise UsageError(f"manifest not found: {path}")
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            rows = [dict(r) for r in csv.DictReader(fh)]
    else:
        with open(path) as fh:
            doc = json.load(fh)
        rows = doc["rows"] if isinstance(doc, dict) else doc
    if not rows:
        raise UsageError("empty manifest")
    return rows


BENCH_COLUMNS = ["problem", "D", "strategy", "mode", "basis", "demonstrations", "iterations",
                 "verifier_time", "total_time", "status", "cause"]


def cmd_bench(args) -> int:
    rows = _read_manifest(args.manifest)
    out = _out_dir(args)
    table = []
    for k, row in enumerate(rows):
        sub = argparse.Namespace(**vars(args))
        sub.problem = row["problem"]
        sub.degree = int(row["D"]) if row.get("D") not in (None, "") else None
        sub.basis = row.get("basis") or None
        sub.strategy = row.get("strategy") or args.strategy
        sub.ce_mode = row.get("mode") or args.ce_mode
        rec = {c: "" for c in BENCH_COLUMNS}
        rec.update(problem=sub.problem, D=sub.degree if sub.degree is not None else "", strategy=sub.strategy,
                   mode=sub.ce_mode, basis=sub.basis or "")
        try:
            problem = _load(sub)
            rec["D"] = problem.D
            row_out = os.path.join(out, f"row_{k:03d}")
            os.makedirs(row_out, exist_ok=True)
            result = synthesize(problem, _options(sub, row_out), _demonstrator(sub, problem))
            s = result.stats
            rec.update(demonstrations=s.demonstrations, iterations=s.iterations,
                       verifier_time=f"{s.verifier_time / 60:.3f}", total_time=f"{s.total_time / 60:.3f}",
                       status="Succ" if result.ok else "Fail",
                       cause="" if result.ok else result.outcome.cause)
        except Exception as exc:  # a broken row must not stop the table
            log.error("bench row %d failed: %s", k, exc)
            rec.update(status="Error", cause=str(exc))
        table.append(rec)
        print(",".join(str(rec[c]) for c in BENCH_COLUMNS), flush=True)
    with open(os.path.join(out, "bench.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser, problem: bool = True) -> None:
    if problem:
        p.add_argument("problem", help="problem JSON file or bundled name (e.g. tora)")
    p.add_argument("--degree", type=int, default=None, help="relaxation degree D")
    p.add_argument("--Delta", type=float, default=None, help="coefficient box half-width")
    p.add_argument("--delta", type=float, default=None, help="robustness radius for termination")
    p.add_argument("--basis", default=None, help="basis label, e.g. quadratic, linear_only, monomials:maxdeg=2")
    p.add_argument("--strategy", choices=L.STRATEGIES, default=L.MVE)
    p.add_argument("--ce-mode", choices=("first", "max"), default="first")
    p.add_argument("--formulation", choices=("vertex", "farkas"), default="vertex",
                   help="relaxation of the decrease condition")
    p.add_argument("--demonstrator", choices=("mpc", "external"), default="mpc")
    p.add_argument("--demonstrator-cmd", default=None, help="command line of an external demonstrator")
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--checkpoint", action="store_true", help="write checkpoint.json after every iteration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory (default: current)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clflearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a certificate")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="verify a certificate file")
    _common(p)
    p.add_argument("certificate")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="simulate the closed loop of a certificate")
    _common(p)
    p.add_argument("certificate")
    p.add_argument("--x0", action="append", help="initial state, comma separated (repeatable)")
    p.add_argument("--samples", type=int, default=0, help="also draw this many initial states from I")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--dt", type=float, default=0.01, help="recording interval")
    p.add_argument("--max-step", type=float, default=1e-3, help="largest integration step")
    p.add_argument("--law", choices=(MINSELECT, SONTAG), default=MINSELECT)
    p.add_argument("--target-radius", type=float, default=0.1,
                   help="target ball radius when the specification has no target set")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run a manifest of synthesis jobs")
    _common(p, problem=False)
    p.add_argument("manifest", help="JSON ({rows: [...]}) or CSV with problem,D,strategy,mode[,basis]")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ProblemError, DegreeError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # internal failures map to exit 1 with a diagnostic
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
