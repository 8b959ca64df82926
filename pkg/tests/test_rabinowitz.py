import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magshell import dynamics, rabinowitz, stability, systems
from magshell.errors import NoConvergence, PreconditionFailed
from magshell.rabinowitz import DiscreteLoop


@given(st.integers(16, 80))
def test_spectral_matrix(n):
    D = rabinowitz.spectral_matrix(n)
    t = np.arange(n) / n
    assert np.allclose(D @ np.ones(n), 0.0, atol=1e-10)
    assert np.allclose(D, -D.T, atol=1e-10)
    m = (n - 1) // 2
    assert np.allclose(D @ np.sin(2 * np.pi * m * t), 2 * np.pi * m * np.cos(2 * np.pi * m * t), atol=1e-8 * n)


def _random_loop(name, seed, n=16, k=0.3):
    s = systems.make_system(name)
    rng = np.random.default_rng(seed)
    q = rng.uniform(-1, 1, (n, s.dim))
    if name == "psl2":
        q[:, 1] = np.exp(q[:, 1])
    p = rng.uniform(-1, 1, (n, s.dim))
    return s, DiscreteLoop(q, p, rng.uniform(-5, 5), k)


@settings(max_examples=10)
@pytest.mark.parametrize("name", ["heisenberg", "psl2", "torus", "sol"])
@given(st.integers(0, 10 ** 6))
def test_gradient_matches_finite_differences(name, seed):
    s, loop = _random_loop(name, seed)
    g = rabinowitz.gradient(loop, s).pack()
    x = loop.pack()
    h = 1e-6
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        a = rabinowitz.action(DiscreteLoop.unpack(x + e, loop.n, loop.dim, loop.k), s)
        b = rabinowitz.action(DiscreteLoop.unpack(x - e, loop.n, loop.dim, loop.k), s)
        fd[i] = (a - b) / (2 * h)
    assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)


@pytest.mark.parametrize("name", ["heisenberg", "psl2"])
def test_jacobian_matches_finite_differences(name):
    s, loop = _random_loop(name, 7)
    J = rabinowitz._jacobian(loop, s)
    x = loop.pack()
    h = 1e-6
    fd = np.empty_like(J)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        a = rabinowitz.gradient(DiscreteLoop.unpack(x + e, loop.n, loop.dim, loop.k), s).pack()
        b = rabinowitz.gradient(DiscreteLoop.unpack(x - e, loop.n, loop.dim, loop.k), s).pack()
        fd[:, i] = (a - b) / (2 * h)
    assert np.abs(J - fd).max() <= 1e-6 * np.abs(J).max()


@given(st.integers(0, 10 ** 6), st.integers(1, 15))
def test_action_is_shift_invariant(seed, shift):
    s, loop = _random_loop("heisenberg", seed)
    rolled = DiscreteLoop(np.roll(loop.q, shift, axis=0), np.roll(loop.p, shift, axis=0), loop.eta, loop.k)
    assert rabinowitz.action(rolled, s) == pytest.approx(rabinowitz.action(loop, s), rel=1e-10, abs=1e-12)
    g0, g1 = rabinowitz.gradient(loop, s), rabinowitz.gradient(rolled, s)
    assert np.allclose(np.roll(g0.q, shift, axis=0), g1.q, atol=1e-12)


def test_constant_loops(torus):
    on = DiscreteLoop.constant(np.zeros(2), np.array([1.0, 0.0]), 16, 0.5)
    assert rabinowitz.action(on, torus) == 0.0
    off = DiscreteLoop.constant(np.zeros(2), np.zeros(2), 16, 0.5, eta=3.0)
    assert rabinowitz.action(off, torus) == pytest.approx(1.5)
    res = rabinowitz.find_critical(on, torus)
    assert abs(res.eta) < 1e-12 and res.matched is None
    rep = rabinowitz.period_action_check(res, stability.build_profiles(torus, 0.5))
    assert rep.omega == 0.0 and rep.lambda_period == 0.0


def test_loop_validation(psl2):
    with pytest.raises(ValueError):
        DiscreteLoop(np.zeros((8, 2)), np.zeros((8, 2)), 1.0, 0.5)
    with pytest.raises(ValueError):
        DiscreteLoop(np.zeros((16, 2)), np.zeros((16, 3)), 1.0, 0.5)
    with pytest.raises(ValueError):
        DiscreteLoop(np.zeros((16, 2)), np.zeros((16, 2)), math.nan, 0.5)
    bad = DiscreteLoop(np.zeros((16, 3)), np.zeros((16, 3)), 1.0, 0.5)
    with pytest.raises(PreconditionFailed):
        rabinowitz.action(bad, psl2)


@pytest.mark.parametrize("reverse", [False, True])
def test_psl2_critical_point(psl2, reverse):
    rec = dynamics.contractible_orbits(psl2, 0.1875, l_max=1)[0]
    seed = rabinowitz.orbit_seed(rec, psl2, n=48, noise=1e-2, reverse=reverse, rng=np.random.default_rng(3))
    res = rabinowitz.find_critical(seed, psl2)
    sign = -1 if reverse else 1
    assert res.eta == pytest.approx(sign * 4 * math.pi, abs=1e-6)
    assert res.action == pytest.approx(sign * math.pi / 2, abs=1e-6)
    assert res.matched is not None and res.matched.l == 1
    rep = rabinowitz.period_action_check(res)
    assert rep.omega == pytest.approx(res.action, abs=1e-4)


def test_critical_point_summary(heis):
    rec = dynamics.contractible_orbits(heis, 0.375, l_max=1)[0]
    res = rabinowitz.find_critical(rabinowitz.orbit_seed(rec, heis, n=32), heis)
    s = res.summary()
    assert s["nodes"] == 32 and s["matched"]["l"] == 1
    assert s["loop_residual"] < 1e-8


def test_no_convergence(heis):
    rec = dynamics.contractible_orbits(heis, 0.375, l_max=1)[0]
    seed = rabinowitz.orbit_seed(rec, heis, n=32, noise=0.2, rng=np.random.default_rng(0))
    with pytest.raises(NoConvergence):
        rabinowitz.find_critical(seed, heis, max_iter=1)


def test_gradient_ascent_step_increases_action(heis):
    s, loop = _random_loop("heisenberg", 11)
    up = rabinowitz.gradient_ascent_step(loop, s, 1e-3)
    assert rabinowitz.action(up, s) > rabinowitz.action(loop, s)


def test_loop_trajectory_is_closed(torus):
    rec = dynamics.contractible_orbits(torus, 0.5, l_max=1)[0]
    loop = rabinowitz.orbit_seed(rec, torus, n=32, reverse=True)
    traj = rabinowitz.loop_trajectory(loop)
    assert np.array_equal(traj.states[0], traj.states[-1])
    assert traj.times[-1] == pytest.approx(2 * math.pi)


@pytest.mark.parametrize("reverse", [False, True])
def test_torus_tameness(torus, reverse):
    rec = dynamics.contractible_orbits(torus, 0.5, l_max=1)[0]
    res = rabinowitz.find_critical(rabinowitz.orbit_seed(rec, torus, n=32, reverse=reverse), torus)
    rep = rabinowitz.period_action_check(res, stability.build_profiles(torus, 0.5))
    assert rep.tame_ratio == pytest.approx(-1.0 if reverse else 1.0, abs=1e-12)
    assert abs(rep.lambda_period) == pytest.approx(math.pi, abs=1e-9)


def test_schlenk(torus, heis):
    chk = rabinowitz.schlenk_check(torus, 0.5)
    assert chk.holds and chk.min_omega == pytest.approx(math.pi, abs=1e-6)
    assert chk.hofer_norm >= chk.min_omega
    with pytest.raises(PreconditionFailed):
        rabinowitz.schlenk_check(heis, 0.3)
