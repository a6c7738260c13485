import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clflearn.poly import (
    CompiledMap,
    Polynomial,
    evaluate,
    gradient,
    lie_derivative,
    linear_combination,
    monomial_basis,
    monomial_exponents,
)

from conftest import TORA_PUBLISHED, x


def test_monomial_basis_order_2d():
    got = [b.items()[0][0] for b in monomial_basis(2, 2)]
    assert got == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_monomial_basis_counts():
    assert len(monomial_basis(4, 2)) == math.comb(6, 2) == 15
    assert [b.items()[0][0] for b in monomial_basis(1, 0)] == [(0,)]
    assert monomial_exponents(3, 4, 2) == tuple(e for e in monomial_exponents(3, 4) if sum(e) >= 2)


def test_monomial_basis_stable():
    assert monomial_basis(3, 3) == monomial_basis(3, 3)


def test_eval_examples():
    p = x(0, 2) ** 2 + x(1, 2) ** 2
    assert p([0.0, 0.0]) == 0.0
    assert (2 * x(0, 2) * x(1, 2))([3.0, 0.5]) == 3.0
    V = Polynomial(TORA_PUBLISHED, 4)
    assert V(np.zeros(4)) == 0.0


def test_eval_batch_matches_single():
    p = x(0, 2) ** 3 - 2 * x(0, 2) * x(1, 2) + 0.5
    X = np.array([[1.0, 2.0], [-0.5, 0.3], [0.0, 0.0]])
    assert np.allclose(evaluate(p, X), [evaluate(p, r) for r in X])
    with pytest.raises(ValueError):
        p([1.0, 2.0, 3.0])


def test_gradient_examples():
    n = 2
    assert gradient(x(0, n) ** 2 + x(1, n) ** 2) == [2 * x(0, n), 2 * x(1, n)]
    assert gradient(x(0, n) * x(1, n) ** 2) == [x(1, n) ** 2, 2 * x(0, n) * x(1, n)]
    assert all(g.is_zero() for g in gradient(Polynomial.constant(5.0, n)))


def test_lie_derivative_examples():
    n = 2
    V = x(0, n) ** 2 + x(1, n) ** 2
    assert lie_derivative(V, [x(1, n), Polynomial.zero(n)]) == 2 * x(0, n) * x(1, n)
    assert lie_derivative(x(0, n) ** 2, [-x(0, n), x(0, n)]) == -2 * x(0, n) ** 2
    f1 = [Polynomial.zero(n), Polynomial.constant(1.0, n)]
    L = lie_derivative(V, f1)
    assert L == 2 * x(1, n)
    # finite-difference oracle of t ↦ V(x + t f1)
    pt = np.array([0.3, -0.7])
    h = 1e-6
    fd = (V(pt + h * np.array([0, 1.0])) - V(pt - h * np.array([0, 1.0]))) / (2 * h)
    assert L(pt) == pytest.approx(fd, rel=1e-8)


def test_linear_combination_examples():
    n = 2
    assert linear_combination([1, 1], [x(0, n) ** 2, x(1, n) ** 2]) == x(0, n) ** 2 + x(1, n) ** 2
    assert linear_combination([0, 0], [x(0, n) ** 2, x(1, n) ** 2]).is_zero()
    basis = monomial_basis(4, 2, 2)
    c = [TORA_PUBLISHED[next(iter(g.terms))] for g in basis]
    assert linear_combination(c, basis) == Polynomial(TORA_PUBLISHED, 4)
    with pytest.raises(ValueError):
        linear_combination([1.0], basis)


def test_records_round_trip():
    p = 1.5 * x(0, 3) * x(2, 3) ** 2 - 4.0
    assert Polynomial.from_records(p.to_records(), 3) == p


# ---------------------------------------------------------------------------
# properties

N = 3
exps = st.tuples(*[st.integers(0, 3)] * N)
coeffs = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
polys = st.dictionaries(exps, coeffs, max_size=6).map(lambda t: Polynomial(t, N))
points = st.lists(st.floats(-2, 2, allow_nan=False), min_size=N, max_size=N).map(np.array)


def _close(a, b, rel):
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))


@given(polys, polys, points)
def test_eval_is_ring_homomorphism(p, q, pt):
    assert _close((p + q)(pt), p(pt) + q(pt), 1e-9)
    assert _close((p * q)(pt), p(pt) * q(pt), 1e-9)


@given(polys, points)
def test_gradient_matches_finite_differences(p, pt):
    h = 1e-5
    for i, g in enumerate(gradient(p)):
        e = np.zeros(N)
        e[i] = h
        fd = (p(pt + e) - p(pt - e)) / (2 * h)
        # central differences carry an O(h²·p''') error, scaled by the coefficients
        scale = max(1.0, sum(abs(c) for c in p.terms.values()) * 8 ** 3)
        assert abs(g(pt) - fd) <= 1e-5 * scale


@given(polys, st.lists(polys, min_size=N, max_size=N), points)
def test_lie_derivative_is_directional_derivative(V, field, pt):
    h = 1e-6
    f = np.array([fi(pt) for fi in field])
    fd = (V(pt + h * f) - V(pt - h * f)) / (2 * h)
    scale = max(1.0, np.linalg.norm(f)) ** 3 * max(1.0, sum(abs(c) for c in V.terms.values())) * 8 ** 3
    assert abs(lie_derivative(V, field)(pt) - fd) <= 1e-5 * scale


@given(st.lists(polys, min_size=1, max_size=4), st.lists(points, min_size=1, max_size=5))
def test_compiled_map_matches_evaluate(ps, pts):
    X = np.array(pts)
    got = CompiledMap(ps)(X)
    want = np.array([[p(r) for p in ps] for r in X])
    assert np.allclose(got, want, rtol=1e-10, atol=1e-9)
