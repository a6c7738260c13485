import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clflearn.demonstrator import (
    DemonstratorError,
    ExternalDemonstrator,
    FunctionDemonstrator,
    MpcDemonstrator,
    cost_gradient,
    demonstrate,
    discrete_step,
    residuals,
    rollout_cost,
)
from clflearn.poly import Polynomial
from clflearn.synthesis import SynthesisOptions, synthesize
from clflearn.system import ControlAffineSystem, InputPolytope, MpcConfig, interval_to_polytope, load_bundled

from conftest import scalar_integrator, x


def decay():
    return ControlAffineSystem([-x(0, 1)], [[Polynomial.constant(1.0, 1)]], interval_to_polytope([-1], [1]))


def test_discrete_step_examples(tora):
    assert discrete_step(scalar_integrator(), [0.0], [1.0], 0.5) == pytest.approx([0.5])
    assert discrete_step(decay(), [2.0], [0.0], 1.0) == pytest.approx([0.0])
    assert np.array_equal(discrete_step(tora.system, np.zeros(4), [0.0], 1.0), np.zeros(4))


def test_rollout_cost_examples(tora):
    cfg = MpcConfig(tau=1.0, N=5, Q=(1.0,) * 4, R=(1.0,))
    assert rollout_cost(tora.system, np.zeros(4), np.zeros((5, 1)), cfg) == 0.0
    # ẋ = u, x0 = 1, N = 1: cost = u²R + N·x(1)²Q = 1 + 0
    cfg1 = MpcConfig(tau=1.0, N=1, Q=(1.0,), R=(1.0,))
    assert rollout_cost(scalar_integrator(), [1.0], [[-1.0]], cfg1) == pytest.approx(1.0)


@given(st.lists(st.floats(-1.5, 1.5), min_size=6, max_size=6), st.floats(0.01, 5))
def test_state_weights_scale_cost_linearly(us, q):
    tora = load_bundled("tora")
    u = np.array(us)[:, None]
    a = MpcConfig(tau=0.5, N=6, Q=(q,) * 4, R=(0.0,))
    b = MpcConfig(tau=0.5, N=6, Q=(2 * q,) * 4, R=(0.0,))
    x0 = np.array([0.3, -0.2, 0.1, 0.0])
    assert rollout_cost(tora.system, x0, u, b) == pytest.approx(2 * rollout_cost(tora.system, x0, u, a), rel=1e-12)


def test_adjoint_gradient_matches_finite_differences(tora):
    cfg = MpcConfig(tau=0.5, N=8, Q=(1.0, 2.0, 0.5, 1.0), R=(0.3,))
    rng = np.random.default_rng(4)
    x0 = rng.uniform(-0.5, 0.5, 4)
    u = rng.uniform(-1, 1, (8, 1))
    cost, g = cost_gradient(tora.system, x0, u, cfg)
    h = 1e-6
    fd = np.zeros_like(u)
    for i in range(8):
        e = np.zeros_like(u)
        e[i, 0] = h
        fd[i] = (rollout_cost(tora.system, x0, u + e, cfg) - rollout_cost(tora.system, x0, u - e, cfg)) / (2 * h)
    assert cost == pytest.approx(rollout_cost(tora.system, x0, u, cfg))
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-7)


def test_residual_jacobian_matches_finite_differences(tora):
    cfg = MpcConfig(tau=0.5, N=8, Q=(1.0, 2.0, 0.5, 1.0), R=(0.3,))
    rng = np.random.default_rng(5)
    x0 = rng.uniform(-0.5, 0.5, 4)
    u = rng.uniform(-1, 1, 8)
    r, J = residuals(tora.system, x0, u, cfg)
    assert float(r @ r) == pytest.approx(rollout_cost(tora.system, x0, u, cfg), rel=1e-12)
    h = 1e-6
    fd = np.column_stack([
        (residuals(tora.system, x0, u + h * e, cfg)[0] - residuals(tora.system, x0, u - h * e, cfg)[0]) / (2 * h)
        for e in np.eye(8)
    ])
    assert np.allclose(J, fd, rtol=1e-6, atol=1e-7)


def test_demonstrate_equilibrium(tora):
    d = demonstrate(tora.system, np.zeros(4), tora.mpc)
    assert np.array_equal(d.u, [0.0]) and d.cost == 0.0


@pytest.mark.parametrize("method", ["lm", "pgd"])
def test_demonstrate_scalar_saturates(method):
    cfg = MpcConfig(tau=1.0, N=1, Q=(1.0,), R=(1.0,), method=method)
    d = demonstrate(scalar_integrator(), [5.0], cfg)
    # oracle: grid search of the 1-step cost (u² + (5 + u)²) over [−1, 1]
    grid = np.linspace(-1, 1, 2001)
    best = grid[np.argmin(grid ** 2 + (5 + grid) ** 2)]
    assert best == -1.0 and d.u == pytest.approx([-1.0])


def test_demonstrate_tora_improves(tora):
    x0 = np.array([0.5, 0.0, 0.0, 0.0])
    d = demonstrate(tora.system, x0, tora.mpc)
    assert tora.system.U.contains(d.u)
    zero = rollout_cost(tora.system, x0, np.zeros((tora.mpc.N, 1)), tora.mpc)
    assert d.cost < zero


def test_lm_beats_projected_gradient_on_tora(tora):
    # the open-loop unstable Euler model is where plain descent stalls
    x0 = np.array([0.8, -0.6, 0.5, 0.3])
    lm = demonstrate(tora.system, x0, replace(tora.mpc, method="lm"))
    pgd = demonstrate(tora.system, x0, tora.mpc)
    assert tora.system.U.contains(lm.u)
    assert lm.cost < pgd.cost <= rollout_cost(tora.system, x0, np.zeros((tora.mpc.N, 1)), tora.mpc)


def test_lm_needs_box_inputs():
    U = InputPolytope(np.array([[1.0, 1.0], [-1.0, -1.0]]), [-1.0, -1.0])
    system = ControlAffineSystem([Polynomial.zero(1)], [[Polynomial.constant(1.0, 1)], [Polynomial.constant(1.0, 1)]], U)
    with pytest.raises(DemonstratorError):
        demonstrate(system, [1.0], MpcConfig(tau=0.5, N=3, Q=(1.0,), R=(1.0, 1.0), method="lm"))
    d = demonstrate(system, [1.0], MpcConfig(tau=0.5, N=3, Q=(1.0,), R=(1.0, 1.0)))
    assert U.contains(d.u)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.sampled_from(["lm", "pgd"]))
def test_demonstrations_feasible_improving_deterministic(pt, method):
    P = load_bundled("local2d")
    cfg = replace(P.mpc, method=method)
    x0 = np.array(pt)
    a = demonstrate(P.system, x0, cfg)
    b = demonstrate(P.system, x0, cfg)
    assert np.all(P.system.U.A @ a.u >= P.system.U.b - 1e-9)
    assert a.cost <= rollout_cost(P.system, x0, np.zeros((P.mpc.N, 1)), P.mpc) + 1e-12
    assert np.array_equal(a.u, b.u)


def test_non_finite_state_rejected():
    with pytest.raises(DemonstratorError):
        demonstrate(scalar_integrator(), [np.nan], MpcConfig())


def test_mpc_demonstrator_funnel_reads_time():
    P = load_bundled("funnel2d")
    demo = MpcDemonstrator(P)
    d0 = demo(np.array([0.0, 0.0, 0.0]))
    d1 = demo(np.array([0.0, 0.0, 1.5]))
    assert d0.u.shape == (2,) and not np.allclose(d0.u, d1.u)


def test_function_demonstrator_projects():
    demo = FunctionDemonstrator(lambda s: -3.0 * s, interval_to_polytope([-1], [1]))
    assert demo(np.array([2.0])).u == pytest.approx([-1.0])


def test_external_demonstrator_protocol():
    code = "import sys\nfor line in sys.stdin:\n    x = float(line.split()[0])\n    print(-x, flush=True)\n"
    demo = ExternalDemonstrator([sys.executable, "-c", code], interval_to_polytope([-1], [1]))
    try:
        assert demo(np.array([0.25])).u == pytest.approx([-0.25])
        assert demo(np.array([4.0])).u == pytest.approx([-1.0])
    finally:
        demo.close()


def test_loop_accepts_stub_demonstrator():
    P = load_bundled("local2d")
    law = FunctionDemonstrator(lambda s: np.array([-2.0 * s[0] - 2.0 * s[1]]), P.system.U)
    res = synthesize(P, SynthesisOptions(), law)
    assert res.ok
