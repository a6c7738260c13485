"""Regenerate the bundled benchmark problem files.

Trigonometric and rational terms are replaced by truncated Taylor
polynomials around the operating point, and every benchmark is written in
coordinates whose target equilibrium is the origin.
"""

import json
import math
from pathlib import Path

import numpy as np

from clflearn.poly import Polynomial
from clflearn.system import interval_to_polytope

OUT = Path(__file__).resolve().parents[1] / "src" / "clflearn" / "problems"


def var(i, n):
    return Polynomial.variable(i, n)


def recs(polys):
    return [p.to_records() for p in polys]


def box(lo, hi):
    return {"box": {"lo": list(map(float, lo)), "hi": list(map(float, hi))}}


def ball(center, radius):
    return {"ball": {"center": list(map(float, center)), "radius": float(radius)}}


def write(name, doc):
    doc = {"schema": 1, "name": name, **doc}
    (OUT / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")


def U_doc(lo, hi):
    U = interval_to_polytope(lo, hi)
    return {"A": U.A.tolist(), "b": U.b.tolist()}


def tora():
    n = 4
    x = [var(i, n) for i in range(n)]
    eps = 0.1
    sin3 = x[2] - (x[2] ** 3) * (1.0 / 6.0)
    f0 = [x[1], -x[0] + sin3 * eps, x[3], Polynomial.zero(n)]
    f1 = [Polynomial.zero(n)] * 3 + [Polynomial.constant(1.0, n)]
    write("tora", {
        "n": n, "m": 1, "f0": recs(f0), "f": [recs(f1)], "U": U_doc([-1.5], [1.5]),
        "spec": {"type": "reach_while_stay", "S": box([-1, -1, -2, -1], [1, 1, 2, 1]),
                 "I": ball([0] * 4, 0.3), "T": ball([0] * 4, 0.1)},
        "basis": "quadratic", "offset": -0.5, "D": 4, "Delta": 100.0, "delta": 1e-3,
        "mpc": {"tau": 1.0, "N": 30, "Q": [1, 1, 1, 1], "R": [1]},
    })


def bicycle():
    # states (y, w, θ, σ) with w = v − 5; sin θ ≈ θ
    n = 4
    y, w, th, sg = (var(i, n) for i in range(n))
    v = w + 5.0
    f0 = [v * th, Polynomial.zero(n), v * sg, Polynomial.zero(n)]
    e = lambda i: [Polynomial.constant(1.0, n) if j == i else Polynomial.zero(n) for j in range(n)]
    write("bicycle", {
        "n": n, "m": 2, "f0": recs(f0), "f": [recs(e(1)), recs(e(3))], "U": U_doc([-10, -10], [10, 10]),
        "spec": {"type": "reach_while_stay", "S": box([-2, -2, -1, -1], [2, 2, 1, 1]),
                 "I": ball([0] * 4, 0.4), "T": ball([0] * 4, 0.1)},
        "basis": "quadratic", "offset": -1.0, "D": 3, "Delta": 100.0, "delta": 1e-3,
        "mpc": {"tau": 0.4, "N": 20, "Q": [1, 1, 1, 1], "R": [1, 1]},
    })


def inverted_pendulum():
    # states (x, ẋ, θ, θ̇); cubic Taylor expansions in θ of the partially linearised model
    m, M, g, l = 0.21, 0.815, 9.8, 0.305
    n = 4
    x = [var(i, n) for i in range(n)]
    th = x[2]
    # (4(M+m) g tanθ − 3 m g sinθ cosθ) / (4(M+m) − 3 m cos²θ), series to θ³
    a0 = 4 * (M + m) * g - 3 * m * g
    a3 = 4 * (M + m) * g / 3 + 3 * m * g * 2 / 3
    d0 = 4 * (M + m) - 3 * m
    d2 = 3 * m
    c1 = a0 / d0
    c3 = (a3 - c1 * d2) / d0
    f0 = [x[1], th * c1 + (th ** 3) * c3, x[3], Polynomial.zero(n)]
    f1 = [Polynomial.zero(n), Polynomial.constant(4.0, n), Polynomial.zero(n),
          (Polynomial.constant(1.0, n) - (th ** 2) * 0.5) * (-3.0 / l)]
    write("inverted_pendulum", {
        "n": n, "m": 1, "f0": recs(f0), "f": [recs(f1)], "U": U_doc([-20], [20]),
        "spec": {"type": "safety", "S": box([-1] * 4, [1] * 4), "I": ball([0] * 4, 0.1)},
        "basis": "quadratic", "offset": -1.0, "D": 4, "Delta": 100.0, "delta": 1e-3,
        "mpc": {"tau": 0.04, "N": 50, "Q": [10, 1, 1, 1], "R": [10]},
    })


def chained(theta, x, y):
    """(θ, x, y) ↦ (x1, x2, x3) with ẋ1 = u1, ẋ2 = u2, ẋ3 = x1 u2 − x2 u1."""
    p = x * np.cos(theta) + y * np.sin(theta)
    q = x * np.sin(theta) - y * np.cos(theta)
    return np.array([theta, p, theta * p - 2 * q])


def unicycle(seg):
    n = 3
    x = [var(i, n) for i in range(n)]
    f0 = [Polynomial.zero(n)] * 3
    f1 = [Polynomial.constant(1.0, n), Polynomial.zero(n), -x[1]]
    f2 = [Polynomial.zero(n), Polynomial.constant(1.0, n), x[0]]
    if seg == 2:
        H = 2.0
        ts = np.linspace(0, H, 201)
        ref = np.array([chained(0.0, t, 0.0) for t in ts])
        start, goal, pad = chained(0.0, 0.0, 0.0), chained(0.0, 2.0, 0.0), 2.0
        N = 10
    else:
        H = 1 / 0.64
        ts = np.linspace(0, H, 201)
        ref = np.array([chained(math.pi - t, -(1 - 0.64 * t) * (1 + 0.64 * t),
                                -(1 - 0.64 * t) * (1 - 0.2 * t - 0.25 * t * t)) for t in ts])
        start, goal, pad = chained(math.pi / 2, -1.0, -1.0), chained(0.0, 0.0, 0.0), 1.5
        N = 20
    lo, hi = ref.min(axis=0) - pad, ref.max(axis=0) + pad
    # the end balls (radius 1) must sit strictly inside S
    lo = np.minimum(lo, np.minimum(start, goal) - 1.25)
    hi = np.maximum(hi, np.maximum(start, goal) + 1.25)
    # cubic least-squares fit of the reference in the chained coordinates, as polynomials in t
    reference = []
    for k in range(3):
        coef = np.polynomial.polynomial.polyfit(ts, ref[:, k], 3)
        reference.append(Polynomial({(d,): float(c) for d, c in enumerate(coef) if abs(c) > 1e-12}, 1))
    write(f"unicycle_seg{seg}", {
        "n": n, "m": 2, "f0": recs(f0), "f": [recs(f1), recs(f2)], "U": U_doc([-3, -3], [3, 3]),
        "spec": {"type": "funnel", "S": box(lo, hi), "I": ball(start, 1.0), "T": ball(goal, 1.0), "horizon": H},
        "basis": "monomials:maxdeg=2,mindeg=1", "offset": -1.0, "D": 4, "Delta": 100.0, "delta": 1e-3,
        "mpc": {"tau": 0.1, "N": N, "Q": [1, 1, 1], "R": [1, 1], "reference": recs(reference)},
    })


def integrator():
    n = 1
    write("integrator", {
        "n": n, "m": 1, "f0": recs([Polynomial.zero(n)]), "f": [recs([Polynomial.constant(1.0, n)])],
        "U": U_doc([-1], [1]), "spec": {"type": "global_stability"},
        "basis": "squares:1", "D": 2, "Delta": 100.0, "delta": 1e-3,
        "mpc": {"tau": 0.5, "N": 5, "Q": [1], "R": [1]},
    })


def local2d():
    # pendulum-like: ẋ1 = x2, ẋ2 = sin x1 + u with sin replaced by its cubic Taylor polynomial
    n = 2
    x = [var(i, n) for i in range(n)]
    f0 = [x[1], x[0] - (x[0] ** 3) * (1.0 / 6.0)]
    f1 = [Polynomial.zero(n), Polynomial.constant(1.0, n)]
    write("local2d", {
        "n": n, "m": 1, "f0": recs(f0), "f": [recs(f1)], "U": U_doc([-2], [2]),
        "spec": {"type": "local_stability", "S": box([-1, -1], [1, 1])},
        "basis": "quadratic", "D": 3, "Delta": 100.0, "delta": 1e-3,
        "mpc": {"tau": 0.2, "N": 20, "Q": [1, 1], "R": [1]},
    })


def safety2d():
    # unstable spiral ẋ = [[1, -1], [1, 1]] x + u with a box input set
    n = 2
    x = [var(i, n) for i in range(n)]
    f0 = [x[0] - x[1], x[0] + x[1]]
    e = lambda i: [Polynomial.constant(1.0, n) if j == i else Polynomial.zero(n) for j in range(n)]
    write("safety2d", {
        "n": n, "m": 2, "f0": recs(f0), "f": [recs(e(0)), recs(e(1))], "U": U_doc([-3, -3], [3, 3]),
        "spec": {"type": "safety", "S": box([-2, -2], [2, 2]), "I": ball([0, 0], 0.5)},
        "basis": "quadratic", "offset": -0.5, "D": 2, "Delta": 100.0, "delta": 1e-3,
        "mpc": {"tau": 0.1, "N": 20, "Q": [1, 1], "R": [1, 1]},
    })


def funnel2d():
    # single integrator in the plane steered from a ball at the origin to a ball at (1, 0)
    n = 2
    e = lambda i: [Polynomial.constant(1.0, n) if j == i else Polynomial.zero(n) for j in range(n)]
    t = Polynomial.variable(0, 1)
    write("funnel2d", {
        "n": n, "m": 2, "f0": recs([Polynomial.zero(n)] * 2), "f": [recs(e(0)), recs(e(1))],
        "U": U_doc([-1, -1], [1, 1]),
        "spec": {"type": "funnel", "S": box([-2, -2], [2, 2]), "I": ball([0, 0], 0.3),
                 "T": ball([1, 0], 0.6), "horizon": 2.0},
        "basis": "monomials:maxdeg=2,mindeg=1", "offset": -0.12, "Delta": 100.0, "delta": 1e-3,
        "mpc": {"tau": 0.1, "N": 20, "Q": [1, 1], "R": [1, 1], "reference": recs([t * 0.5, Polynomial.zero(1)])},
    })


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    tora()
    bicycle()
    inverted_pendulum()
    unicycle(1)
    unicycle(2)
    integrator()
    local2d()
    safety2d()
    funnel2d()
    print("wrote", sorted(p.name for p in OUT.glob("*.json")))
