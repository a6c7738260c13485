import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clflearn.optim import LinearProgram, solve_lp
from clflearn.system import (
    BUNDLED,
    Funnel,
    InputPolytope,
    ProblemError,
    ReachWhileStay,
    Safety,
    ball_set,
    bundled_path,
    box_set,
    check_invariants,
    interval_to_polytope,
    is_stabilization,
    load_bundled,
    load_problem,
    parse_basis,
    problem_to_dict,
    serialize_problem,
)

from conftest import x


def test_tora_bundle(tora):
    assert (tora.n, tora.m) == (4, 1)
    assert np.allclose(tora.system.U.vertices().ravel(), [-1.5, 1.5])
    assert isinstance(tora.spec, ReachWhileStay)
    assert np.allclose(tora.spec.S.lo, [-1, -1, -2, -1]) and np.allclose(tora.spec.S.hi, [1, 1, 2, 1])
    assert (tora.D, tora.r, tora.Delta, tora.delta) == (4, 10, 100.0, 1e-3)
    assert (tora.mpc.tau, tora.mpc.N, tora.mpc.Q, tora.mpc.R) == (1.0, 30, (1.0,) * 4, (1.0,))


def test_bicycle_bundle():
    P = load_bundled("bicycle")
    assert (P.n, P.m) == (4, 2)
    assert np.allclose(P.system.U.vertices(), [[-10, -10], [-10, 10], [10, -10], [10, 10]])
    assert P.spec.I.encoding == {"ball": {"center": [0.0] * 4, "radius": 0.4}}
    assert P.spec.T.encoding == {"ball": {"center": [0.0] * 4, "radius": 0.1}}


def _doc():
    return json.loads(bundled_path("integrator").read_bytes())


def test_empty_input_polytope_rejected():
    doc = _doc()
    doc["U"] = {"A": [[1], [-1]], "b": [1, 0]}  # u ≥ 1 and u ≤ 0
    with pytest.raises(ProblemError, match="empty input polytope"):
        load_problem(doc)


def test_schema_errors():
    doc = _doc()
    del doc["f0"]
    with pytest.raises(ProblemError, match="schema"):
        load_problem(doc)
    with pytest.raises(ProblemError, match="schema"):
        load_problem(b"{not json")
    doc = _doc()
    doc["schema"] = 2
    with pytest.raises(ProblemError, match="schema"):
        load_problem(doc)


def test_degree_bound_enforced(tora):
    doc = problem_to_dict(tora)
    doc["D"] = 1
    with pytest.raises(ProblemError, match="degree bound"):
        load_problem(doc)


def test_interval_to_polytope_examples():
    U = interval_to_polytope([-1.5], [1.5])
    assert np.array_equal(U.A, [[1.0], [-1.0]]) and np.array_equal(U.b, [-1.5, -1.5])
    assert interval_to_polytope([-10, -10], [10, 10]).A.shape == (4, 2)
    with pytest.raises(ProblemError):
        interval_to_polytope([0], [0])


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.1, 5)), min_size=1, max_size=3))
def test_interval_polytope_extremes_by_lp(spans):
    lo = np.array([a for a, _ in spans])
    hi = lo + np.array([w for _, w in spans])
    U = interval_to_polytope(lo, hi)
    for i in range(len(lo)):
        e = np.zeros(len(lo))
        e[i] = 1.0
        assert solve_lp(LinearProgram(e, U.A, U.b)).objective == pytest.approx(hi[i], abs=1e-7)
        assert -solve_lp(LinearProgram(-e, U.A, U.b)).objective == pytest.approx(lo[i], abs=1e-7)


def test_ball_set_examples():
    n = 4
    B = ball_set([0] * n, 0.4)
    want = sum((x(i, n) ** 2 for i in range(1, n)), x(0, n) ** 2) - 0.16
    assert B.constraints[0].allclose(want)
    assert ball_set([0], 1).constraints[0] == x(0, 1) ** 2 - 1
    c = ball_set([1, 0], 0.1).constraints[0]
    assert c.allclose((x(0, 2) - 1) ** 2 + x(1, 2) ** 2 - 0.01)
    with pytest.raises(ProblemError):
        ball_set([0], 0.0)


def test_box_set_membership():
    S = box_set([-1, -2], [1, 2])
    assert S.contains(np.array([0.9, -1.9]))
    assert not S.contains(np.array([1.1, 0]))
    assert not S.contains(np.array([1.0, 0]), strict=True)


def test_parse_basis_labels():
    assert len(parse_basis("quadratic", 4)) == 10
    assert len(parse_basis("linear_only", 4)) == 4
    assert parse_basis("squares:1,2", 4) == [x(0, 4) ** 2, x(1, 4) ** 2]
    assert len(parse_basis("monomials:maxdeg=2,mindeg=1", 3)) == 9
    with pytest.raises(ProblemError):
        parse_basis("squares:0", 2)
    with pytest.raises(ProblemError):
        parse_basis("cubic", 2)


def test_vertices_general_polytope():
    # triangle u1 ≥ 0, u2 ≥ 0, u1 + u2 ≤ 1
    U = InputPolytope(np.array([[1, 0], [0, 1], [-1, -1]]), np.array([0, 0, -1]))
    assert np.allclose(U.vertices(), [[0, 0], [0, 1], [1, 0]])
    p = U.project(np.array([1.0, 1.0]))
    assert np.allclose(p, [0.5, 0.5], atol=1e-7) and U.contains(p)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_round_trip(name):
    P = load_bundled(name)
    Q = load_problem(serialize_problem(P), name=name)
    assert Q.system == P.system and Q.spec == P.spec and Q.basis == P.basis
    assert (Q.D, Q.Delta, Q.delta, Q.offset, Q.mpc) == (P.D, P.Delta, P.delta, P.offset, P.mpc)


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_equilibrium_and_invariants(name):
    P = load_bundled(name)
    check_invariants(P)
    if is_stabilization(P.spec) or isinstance(P.spec, (Safety, ReachWhileStay)):
        assert np.max(np.abs(P.system.drift(np.zeros(P.n)))) <= 1e-9


def test_funnel_lifts_time():
    P = load_bundled("funnel2d")
    assert isinstance(P.spec, Funnel)
    assert P.certificate_dimension == 3
    L = P.lifted_system()
    assert L.n == 3 and L.f0[-1].is_zero()
