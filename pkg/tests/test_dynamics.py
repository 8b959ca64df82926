import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magshell import dynamics, integrate, systems
from magshell.errors import PreconditionFailed, Unsupported
from magshell.systems import PhaseState


@given(st.floats(0.01, 0.49))
def test_heisenberg_orbit_family(k):
    heis = systems.make_system("heisenberg")
    recs = dynamics.contractible_orbits(heis, k, l_max=2)
    assert [r.l for r in recs] == [1, 2]
    r = recs[0]
    assert r.C == pytest.approx(math.sqrt(1 - 2 * k) - 1, abs=1e-12)
    assert r.T == pytest.approx(2 * math.pi / (1 + r.C), rel=1e-12)
    assert r.omega == pytest.approx(2 * math.pi * (1 - math.sqrt(1 - 2 * k)), abs=1e-4)
    assert recs[1].omega == pytest.approx(2 * r.omega, rel=1e-12)


@pytest.mark.parametrize("k", [0.5, 0.6, 2.0])
def test_heisenberg_no_orbits_above_half(heis, k):
    assert dynamics.contractible_orbits(heis, k) == []


@settings(max_examples=10)
@given(st.floats(0.01, 0.245))
def test_psl2_orbit_family(k):
    psl2 = systems.make_system("psl2")
    recs = dynamics.contractible_orbits(psl2, k, l_max=1)
    assert len(recs) == 1
    r = recs[0]
    assert r.C == pytest.approx((-1 + math.sqrt(1 - 4 * k)) / 2, abs=1e-12)
    assert r.mu == pytest.approx(-1 - 2 * r.C, abs=1e-12)
    # omega = T (2k + C) for the circles of this family
    assert r.omega == pytest.approx(r.T * (2 * k + r.C), abs=1e-4)
    assert r.homotopy == (1, 1)


@pytest.mark.parametrize("k", [0.25, 0.3, 1.0])
def test_psl2_no_orbits_from_quarter(psl2, k):
    assert dynamics.contractible_orbits(psl2, k) == []


def test_psl2_second_root_is_not_contractible():
    k = 0.24
    C2 = (-1 - math.sqrt(1 - 4 * k)) / 2
    A = math.sqrt(2 * k - C2 * C2)
    T = 2 * math.pi / abs(-1 - 2 * C2)
    dist, gap = dynamics.psl2_lift_defect(C2, A, T)
    assert dist < 1e-10
    assert gap == pytest.approx(4 * math.pi, abs=1e-8)


@settings(max_examples=10)
@given(st.floats(0.05, 3))
def test_torus_orbits_per_frequency(k):
    J = np.zeros((4, 4))
    J[0, 1], J[1, 0] = 2.0, -2.0
    J[2, 3], J[3, 2] = 1.0, -1.0
    t4 = systems.MagneticSystem.torus(J)
    om = sorted(r.omega for r in dynamics.contractible_orbits(t4, k, l_max=1))
    assert om == pytest.approx([2 * math.pi * k / 2, 2 * math.pi * k], rel=1e-6)


@pytest.mark.parametrize("name", ["heisenberg", "psl2", "torus"])
def test_records_close_up(name):
    s = systems.make_system(name)
    for r in dynamics.contractible_orbits(s, 0.1875, l_max=3):
        end = systems.closed_form_flow(r.start, r.period, s)
        assert np.allclose(end.p, r.start.p, atol=1e-8)
        assert np.allclose(end.q[:2], r.start.q[:2], atol=1e-8)


def test_omega_energy_needs_a_closed_loop(heis):
    st0 = PhaseState(np.zeros(3), np.array([0.5, 0.0, -0.5]))
    with pytest.raises(PreconditionFailed):
        dynamics.omega_energy(dynamics.sample_orbit(st0, 1.0, heis), heis)


def test_constant_loop_has_zero_omega(heis):
    traj = integrate.Trajectory(np.linspace(0, 1, 9), np.zeros((9, 6)), "const", 0.125)
    assert dynamics.omega_energy(traj, heis) == 0.0


@pytest.mark.parametrize("name", ["sol", "nil4"])
def test_no_detector(name):
    with pytest.raises(Unsupported):
        dynamics.contractible_orbits(systems.make_system(name), 0.3)


def test_bad_arguments(heis):
    with pytest.raises(ValueError):
        dynamics.contractible_orbits(heis, 0.0)
    with pytest.raises(ValueError):
        dynamics.contractible_orbits(heis, 0.3, l_max=0)


@given(st.floats(-2, 2), st.floats(0, 2))
def test_classification_follows_the_discriminant(C, A):
    t = dynamics.classify_psl2(C, A)
    disc = (1 + C) ** 2 - A * A
    if disc > 1e-9:
        assert t is dynamics.OrbitType.ELLIPTIC
    elif disc < -1e-9:
        assert t is dynamics.OrbitType.HYPERBOLIC


def test_parabolic_boundary():
    assert dynamics.classify_psl2(-0.5, 0.5) is dynamics.OrbitType.PARABOLIC
    with pytest.raises(ValueError):
        dynamics.classify_psl2(0.0, -1.0)


@given(st.floats(0.001, 2))
def test_entropy_threshold_at_quarter(k):
    assert dynamics.entropy_threshold(k) == (k <= 0.25)
    # min of 2C^2 + 2C + 1 - 2k over |C| <= sqrt(2k)
    c = max(-0.5, -math.sqrt(2 * k))
    assert dynamics.entropy_margin(k) == pytest.approx(2 * c * c + 2 * c + 1 - 2 * k, abs=1e-12)


def test_entropy_threshold_exact_at_quarter():
    assert dynamics.entropy_threshold(0.25)
    assert not dynamics.entropy_threshold(0.25 + 1e-12)


def test_lyapunov_vanishes_on_heisenberg(heis):
    st0 = PhaseState(np.zeros(3), np.array([0.7, 0.0, -0.5]))
    est = dynamics.lyapunov_exponent(heis, st0, t_max=40.0, dt=1e-2)
    assert abs(est.exponent) < 0.05
    with pytest.raises(ValueError):
        dynamics.lyapunov_exponent(heis, st0, t_max=0.0)


@pytest.mark.parametrize("name,k", [("heisenberg", 0.375), ("psl2", 0.1875), ("psl2", 0.05), ("torus", 0.5)])
def test_displacement_probe_bound(name, k):
    s = systems.make_system(name)
    c = dynamics.displacement_probe(s, k, samples=32)
    assert c.observed_exit <= c.exit_time * (1 + 1e-2)
    assert c.growth_coefficient > 0


def test_displacement_preconditions(heis, psl2, sol):
    with pytest.raises(PreconditionFailed):
        dynamics.displacement_probe(heis, 0.5)
    with pytest.raises(PreconditionFailed):
        dynamics.displacement_probe(psl2, 0.25)
    with pytest.raises(PreconditionFailed):
        dynamics.displacement_probe(systems.MagneticSystem.torus(np.zeros((2, 2))), 0.5)
    with pytest.raises(Unsupported):
        dynamics.displacement_probe(sol, 0.1)


def test_record_json(heis):
    r = dynamics.contractible_orbits(heis, 0.375, l_max=1)[0]
    d = r.to_json()
    assert d["homotopy"] is None and d["l"] == 1
    assert r.period == r.T
