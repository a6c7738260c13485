import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clflearn.optim import (
    LinearProgram,
    SemidefiniteProgram,
    Status,
    analytic_center,
    chebyshev_center,
    max_volume_ellipsoid,
    solve_lp,
    solve_sdp,
    unit_ball_log_volume,
)

SQUARE = (np.vstack([np.eye(2), -np.eye(2)]), -np.ones(4))


def test_lp_box():
    out = solve_lp(LinearProgram(np.array([1.0]), np.array([[1.0], [-1.0]]), np.array([-1.5, -1.5])))
    assert out.status is Status.OPTIMAL and out.objective == pytest.approx(1.5)


def test_lp_infeasible():
    out = solve_lp(LinearProgram(np.array([0.0]), np.array([[1.0], [-1.0]]), np.array([1.0, 0.0])))
    assert out.status is Status.INFEASIBLE


def test_lp_unbounded():
    out = solve_lp(LinearProgram(np.array([1.0]), np.array([[1.0]]), np.array([0.0])))
    assert out.status is Status.UNBOUNDED


def test_chebyshev_square():
    out, z, radius = chebyshev_center(*SQUARE)
    assert out.ok and np.allclose(z, 0, atol=1e-8) and radius == pytest.approx(1.0)


def test_sdp_trace_pinned():
    Z0 = np.diag([1.0, 0.0])
    prog = SemidefiniteProgram(np.eye(2), [(np.eye(2), "<=", 1.0)], Z0)
    out = solve_sdp(prog)
    assert out.status is Status.OPTIMAL
    assert out.objective == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(out.x, Z0, atol=1e-5)


def test_sdp_diagonal():
    E11 = np.diag([1.0, 0.0])
    E22 = np.diag([0.0, 1.0])
    out = solve_sdp(SemidefiniteProgram(np.eye(2), [(E11, "==", 1.0), (E22, "<=", 2.0)]))
    assert out.status is Status.OPTIMAL and out.objective == pytest.approx(3.0, abs=1e-6)


def test_sdp_infeasible():
    out = solve_sdp(SemidefiniteProgram(np.eye(2), [(np.eye(2), "<=", 0.0)], np.diag([1.0, 0.0])))
    assert out.status is Status.INFEASIBLE


@given(st.integers(2, 4), st.integers(0, 10_000))
def test_sdp_solution_is_psd_above_base(s, seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(s, s))
    C = C + C.T
    B = rng.normal(size=(s, s))
    base = B @ B.T * 0.1
    prog = SemidefiniteProgram(C, [(np.eye(s), "<=", float(np.trace(base)) + 1.0)], base)
    out = solve_sdp(prog)
    assert out.status is Status.OPTIMAL
    assert np.linalg.eigvalsh(out.x - base).min() >= -10 * 1e-7


def test_mve_square():
    out, c, E = max_volume_ellipsoid(*SQUARE)
    assert out.ok and np.allclose(c, 0, atol=1e-6) and np.allclose(E, np.eye(2), atol=1e-5)


def test_mve_rectangle():
    A = np.vstack([np.eye(2), -np.eye(2)])
    out, c, E = max_volume_ellipsoid(A, np.array([-2.0, -1.0, -2.0, -1.0]))
    assert out.ok and np.allclose(c, 0, atol=1e-6) and np.allclose(E, np.diag([2.0, 1.0]), atol=1e-5)


def _mve_triangle_center():
    # oracle: the John ellipsoid of a triangle is the Steiner inellipse, centred at the centroid;
    # the Steiner inellipse of the right isosceles triangle with legs 1 has centre (1/3, 1/3).
    return np.array([1.0, 1.0]) / 3.0


def test_mve_triangle():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    out, c, E = max_volume_ellipsoid(A, np.array([0.0, 0.0, -1.0]))
    assert out.ok and np.allclose(c, _mve_triangle_center(), atol=1e-5)
    # Steiner inellipse area = π/(3√3) · triangle area
    assert math.pi * np.linalg.det(E) == pytest.approx(math.pi / (3 * math.sqrt(3)) * 0.5, rel=1e-5)


def _random_polytope(rng, d):
    k = rng.integers(d + 2, 3 * d + 4)
    A = rng.normal(size=(k, d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    b = -rng.uniform(0.2, 1.5, size=k)
    box = np.vstack([np.eye(d), -np.eye(d)])
    return np.vstack([A, box]), np.concatenate([b, -3.0 * np.ones(2 * d)])


@given(st.sampled_from([2, 3]), st.integers(0, 10_000))
def test_mve_boundary_inside_region(d, seed):
    rng = np.random.default_rng(seed)
    A, b = _random_polytope(rng, d)
    out, c, E = max_volume_ellipsoid(A, b)
    assert out.ok
    V = rng.normal(size=(10_000, d))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    P = c + V @ E.T
    An = A / np.linalg.norm(A, axis=1, keepdims=True)
    bn = b / np.linalg.norm(A, axis=1)
    assert (P @ An.T - bn).min() >= -1e-7


@given(st.integers(0, 10_000))
def test_mve_not_beaten_on_grid(seed):
    rng = np.random.default_rng(seed)
    A, b = _random_polytope(rng, 2)
    out, c, E = max_volume_ellipsoid(A, b)
    An = A / np.linalg.norm(A, axis=1, keepdims=True)
    bn = b / np.linalg.norm(A, axis=1)
    w, U = np.linalg.eigh(E)
    for axis in range(2):
        grow = w.copy()
        grow[axis] *= 1.05
        E2 = (U * grow) @ U.T
        for dx in np.linspace(-0.2, 0.2, 9):
            for dy in np.linspace(-0.2, 0.2, 9):
                c2 = c + [dx, dy]
                fits = np.all(An @ c2 - np.linalg.norm(E2 @ An.T, axis=0) >= bn)
                assert not fits


def test_analytic_center_square():
    assert np.allclose(analytic_center(*SQUARE), 0, atol=1e-8)


def test_unit_ball_volume():
    assert math.exp(unit_ball_log_volume(2)) == pytest.approx(math.pi)
    assert math.exp(unit_ball_log_volume(3)) == pytest.approx(4 * math.pi / 3)


def test_chebyshev_triangle_is_incircle():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    out, z, radius = chebyshev_center(A, np.array([0.0, 0.0, -1.0]))
    r = (2 - math.sqrt(2)) / 2  # inradius (a + b − c)/2 of the legs-1 right triangle
    assert np.allclose(z, [r, r], atol=1e-8) and radius == pytest.approx(r)
