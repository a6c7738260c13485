import math

import numpy as np
import pytest
from scipy.optimize import linprog
from hypothesis import given, strategies as st

from clflearn import learner as L
from clflearn.optim import EPS_STRICT, max_volume_ellipsoid
from clflearn.poly import Polynomial, monomial_basis
from clflearn.system import ControlAffineSystem, GlobalStability, ProblemSpec, interval_to_polytope
from clflearn.verifier import MomentFrame, point_functionals

from conftest import ellipsoid_log_volume, random_polytope, scalar_problem, x


def test_init_region_homogeneous_basis():
    reg = L.init_region(monomial_basis(2, 2, 2), 100.0)
    assert reg.eq_A.shape == (0, 3) and reg.dimension == 3
    A, b = reg.rows()
    assert np.allclose(b, -100.0)


def test_init_region_constant_in_basis():
    basis = monomial_basis(2, 2)  # starts with the constant 1
    reg = L.init_region(basis, 100.0)
    assert reg.eq_A.shape == (1, 6) and reg.dimension == 5
    assert reg.eq_A[0, 0] == 1.0 and not reg.eq_A[0, 1:].any()


def test_positivity_cut_examples():
    reg = L.init_region([x(0, 2) ** 2, x(1, 2) ** 2], 1.0)
    ct = L.add_positivity_cut(reg, [1.0, 0.0])
    assert np.allclose(ct.a, [1, 0]) and ct.b == pytest.approx(EPS_STRICT)
    ct = L.add_positivity_cut(reg, [1.0, 1.0])
    assert np.allclose(ct.a, np.array([1, 1]) / math.sqrt(2))
    # a lifted functional (0.5, 0.5) is the same half-space
    assert L.add_positivity_cut(reg, [0.5, 0.5]) is None
    assert len(reg.cuts) == 2


def test_decrease_cut_scalar_integrator():
    P = scalar_problem()
    fr = MomentFrame(P)
    g, lie = point_functionals(fr, [1.0])
    dec = lie[:, 0] + lie[:, 1:] @ np.array([-1.0])
    assert np.allclose(g, [1.0]) and np.allclose(dec, [-2.0])
    reg = L.init_region(P.basis, 100.0)
    added = L.add_decrease_cut(reg, g, dec)
    # c1 > 0 and −2c1 < 0 normalise to the same row
    assert len(added) == 1 and np.allclose(reg.cuts[0].a, [1.0])


def _two_state(f0):
    U = interval_to_polytope([-1], [1])
    one, zero = Polynomial.constant(1.0, 2), Polynomial.zero(2)
    sys = ControlAffineSystem(f0, [[zero, one]], U)
    return ProblemSpec(sys, GlobalStability(), tuple(monomial_basis(2, 2, 2)), 2)


def test_decrease_functional_hand_lie_derivative():
    # f0 = (x2, 0) vanishes at (1, 0), so every Lie functional is zero there
    fr = MomentFrame(_two_state([x(1, 2), Polynomial.zero(2)]))
    g, lie = point_functionals(fr, [1.0, 0.0])
    assert np.allclose(g, [1, 0, 0]) and np.allclose(lie[:, 0], 0)
    reg = L.init_region(fr.basis, 100.0)
    added = L.add_decrease_cut(reg, g, lie[:, 0])
    assert len(added) == 1 and np.allclose(added[0].a, [1, 0, 0])
    # with f0 = (x2, x1): ∇(x1²)·f0 = 2x1x2 = 0, ∇(x1x2)·f0 = x2² + x1² = 1, ∇(x2²)·f0 = 2x1x2 = 0
    fr = MomentFrame(_two_state([x(1, 2), x(0, 2)]))
    g, lie = point_functionals(fr, [1.0, 0.0])
    assert np.allclose(lie[:, 0], [0, 1, 0])
    reg = L.init_region(fr.basis, 100.0)
    added = L.add_decrease_cut(reg, g, lie[:, 0])
    assert len(added) == 2 and np.allclose(added[1].a, [0, -1, 0])


def test_cut_excludes_candidate_on_boundary():
    reg = L.init_region([x(0, 2) ** 2, x(1, 2) ** 2], 1.0)
    c = np.array([0.0, 0.3])  # a·c = 0 sits exactly on the cut c1 > 0
    L.add_positivity_cut(reg, [1.0, 0.0], refuted=c)
    assert not reg.contains(c)


def test_refuted_adjustment_excludes_noisy_candidate():
    reg = L.init_region([x(0, 2) ** 2, x(1, 2) ** 2], 1.0)
    c = np.array([0.2, 0.0])  # the functional alone would keep c feasible
    L.add_positivity_cut(reg, [1.0, 0.0], refuted=c)
    assert not reg.contains(c) and reg.worst_violation(c) >= EPS_STRICT / 2


@pytest.mark.parametrize("strategy", L.STRATEGIES)
def test_propose_square(strategy):
    reg = L.init_region([x(0, 2) ** 2, x(1, 2) ** 2], 1.0)
    c, ell = L.propose_candidate(reg, strategy)
    assert np.allclose(c, 0, atol=1e-6)
    assert (ell is not None) == (strategy == L.MVE)


def test_mve_after_half_cut():
    reg = L.init_region([x(0, 2) ** 2, x(1, 2) ** 2], 1.0)
    L.add_positivity_cut(reg, [1.0, 0.0])
    c, ell = L.propose_candidate(reg, L.MVE)
    # closed-form MVE of the rectangle [ε, 1] × [−1, 1]
    assert np.allclose(c, [(1 + EPS_STRICT) / 2, 0], atol=1e-6)
    assert np.allclose(ell.shape, np.diag([(1 - EPS_STRICT) / 2, 1.0]), atol=1e-6)


def test_empty_region():
    reg = L.init_region([x(0, 2) ** 2, x(1, 2) ** 2], 1.0)
    L.add_positivity_cut(reg, [1.0, 0.0], -0.9)
    L.add_positivity_cut(reg, [-1.0, 0.0], -0.9)
    for strategy in L.STRATEGIES:
        with pytest.raises(L.EmptyRegion):
            L.propose_candidate(reg, strategy)


def test_should_terminate():
    log_vol = lambda E: ellipsoid_log_volume(np.asarray(E))
    small = L.InscribedEllipsoid(np.zeros(2), np.diag([1e-4, 1e-4]), log_vol(np.diag([1e-4, 1e-4])))
    assert L.should_terminate(small, 1e-3)
    unit = L.InscribedEllipsoid(np.zeros(2), np.eye(2), log_vol(np.eye(2)))
    assert not L.should_terminate(unit, 1e-3)
    edge = L.InscribedEllipsoid(np.zeros(2), np.eye(2) * 1e-3, math.log(math.pi) + 2 * math.log(1e-3))
    assert not L.should_terminate(edge, 1e-3)


def _bound_oracle(d, Delta, delta):
    # direct evaluation of ⌈d·ln(Δ/δ)/ln(9/8)⌉ with exact rationals for the ratio
    from fractions import Fraction

    ratio = Fraction(Delta).limit_denominator() / Fraction(delta).limit_denominator()
    return math.ceil(d * math.log(ratio) / math.log(Fraction(9, 8)))


def test_iteration_bound():
    assert _bound_oracle(2, 100, 1e-3) == 196 and _bound_oracle(10, 100, 1e-3) == 978
    assert L.iteration_bound(2, 100.0, 1e-3) == 196
    assert L.iteration_bound(10, 100.0, 1e-3) == 978
    assert L.iteration_bound(3, 5.0, 5.0) == 0
    with pytest.raises(ValueError):
        L.iteration_bound(2, 1.0, 2.0)


def test_region_serialisation_round_trip():
    reg = L.init_region(monomial_basis(2, 2), 10.0)
    L.add_positivity_cut(reg, [0, 1, 2, 3, 4, 5], iteration=3)
    back = L.CandidateRegion.from_dict(reg.to_dict())
    A1, b1 = reg.rows()
    A2, b2 = back.rows()
    assert np.allclose(A1, A2) and np.allclose(b1, b2) and np.allclose(back.eq_A, reg.eq_A)


def test_collapse_thin_directions():
    reg = L.init_region([x(0, 2) ** 2, x(1, 2) ** 2], 1.0)
    L.add_positivity_cut(reg, [0.0, 1.0], -0.3)
    L.add_positivity_cut(reg, [0.0, -1.0], 0.3 - 1e-11)  # slab of width ~1e-11 in c2
    ell = L.InscribedEllipsoid(np.array([0.0, 0.3]), np.diag([1.0, 1e-12]), 0.0)
    assert L.collapse_thin_directions(reg, ell) == 1
    assert reg.dimension == 1 and reg.collapses == 1


def test_prune_removes_implied_rows():
    reg = L.init_region([x(0, 2) ** 2, x(1, 2) ** 2], 1.0)
    for k in range(1, 120):
        L.add_positivity_cut(reg, [1.0, 0.0], k * 1e-3)  # each row implied by the next
    removed = L.prune(reg)
    assert removed >= 100 and len(reg.cuts) <= 19


# ---------------------------------------------------------------------------
# properties

@given(st.integers(0, 10_000), st.sampled_from([2, 3]))
def test_cut_removes_candidate_and_keeps_old_rows(seed, d):
    rng = np.random.default_rng(seed)
    reg = L.init_region([x(i, d) ** 2 for i in range(d)], 1.0)
    prev_rows = []
    for _ in range(4):
        try:
            c, _ = L.propose_candidate(reg, L.CHEBYSHEV)
        except L.EmptyRegion:
            # a cut offset can pass the far side; confirm with a max-slack LP
            A, b = reg.rows()
            res = linprog(np.append(np.zeros(d), -1.0), A_ub=-np.hstack([A, -np.ones((len(b), 1))]), b_ub=-b,
                          bounds=[(None, None)] * d + [(None, 1.0)])
            assert res.status == 2 or -res.fun <= 1e-9
            return
        a = rng.normal(size=d)
        L.add_positivity_cut(reg, a, -float(a @ c) + rng.uniform(-0.05, 0.0), refuted=c)
        assert not reg.contains(c)
        A, b = reg.rows()
        for row in prev_rows:
            assert any(np.allclose(row, np.append(A[i], b[i])) for i in range(len(b)))
        prev_rows = [np.append(A[i], b[i]) for i in range(len(b))]


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_same_refutation_twice_adds_one_row(a):
    reg = L.init_region(monomial_basis(3, 2, 2)[:3], 1.0)
    c = np.zeros(3)
    first = L.add_positivity_cut(reg, a, refuted=c)
    second = L.add_positivity_cut(reg, a, refuted=c)
    assert second is None
    assert len(reg.cuts) == (0 if first is None else 1)


def mve_cut_ratio(rng, d):
    """Log-volume ratio of the MVEs before and after a random cut through the old centre."""
    A, b = random_polytope(rng, d)
    out, c, E = max_volume_ellipsoid(A, b)
    a = rng.normal(size=d)
    a /= np.linalg.norm(a)
    out2, c2, E2 = max_volume_ellipsoid(np.vstack([A, a]), np.append(b, a @ c))
    assert out.ok and out2.ok
    return math.exp(ellipsoid_log_volume(E2) - ellipsoid_log_volume(E))


@given(st.integers(0, 10_000), st.sampled_from([2, 3]))
def test_mve_volume_law(seed, d):
    assert mve_cut_ratio(np.random.default_rng(seed), d) <= 8 / 9 + 1e-9
