import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magshell import stability, systems
from magshell.errors import NotStable, PreconditionFailed, Unsupported, VerificationFailure
from magshell.systems import PhaseState

heis_k = st.floats(0.02, 0.48)
psl2_k = st.one_of(st.floats(0.02, 0.24), st.floats(0.26, 0.48))


def _shell_point(k, pg, angle, q=(0.1, 1.2, 0.3)):
    rho = math.sqrt(max(2 * k - pg * pg, 0.0))
    return np.array([*q, rho * math.cos(angle), rho * math.sin(angle), pg])


@settings(max_examples=15)
@given(heis_k, st.floats(-1, 1), st.floats(0, 2 * math.pi))
def test_heisenberg_profile_pairing_formula(k, u, a):
    heis = systems.make_system("heisenberg")
    rec = stability.build_profiles(heis, k)
    pg = u * math.sqrt(2 * k) * 0.999
    z = _shell_point(k, pg, a)
    expected = float(rec.f(pg)) * (2 * k + pg) + float(rec.g(pg)) * (1 + pg)
    assert rec.pairing(z) == pytest.approx(expected, abs=1e-12)
    assert expected > 0


@settings(max_examples=15)
@given(psl2_k, st.floats(-1, 1), st.floats(0, 2 * math.pi))
def test_psl2_profiles_solve_the_contraction_equation(k, u, a):
    psl2 = systems.make_system("psl2")
    rec = stability.build_profiles(psl2, k)
    t = u * math.sqrt(2 * k)
    res = rec.f.derivative(t) * (2 * k + t) + rec.g.derivative(t) * (1 + 2 * t)
    assert abs(res) < 1e-8
    z = _shell_point(k, t * 0.999, a)
    x = systems.rhs(z, psl2)
    # i_X d(lambda) kills the tangent space of the level set
    v = np.random.default_rng(0).standard_normal(6)
    g = systems.grad_hamiltonian(z, psl2)
    v -= (v @ g) / (g @ g) * g
    assert abs(v @ rec.differential(z).T @ x) < 1e-8


def test_differential_matches_finite_differences(heis):
    rec = stability.build_profiles(heis, 0.3)
    z = _shell_point(0.3, -0.6 + 0.02, 0.4)
    h = 1e-6
    K = np.array([(rec.covector(z + h * e) - rec.covector(z - h * e)) / (2 * h) for e in np.eye(6)]).T
    assert np.allclose(rec.differential(z), K.T - K, atol=1e-5)


@pytest.mark.parametrize("name,k", [("heisenberg", 0.3), ("heisenberg", 0.1), ("heisenberg", 0.8),
                                    ("psl2", 0.2), ("psl2", 0.3), ("psl2", 0.7), ("sol", 0.4), ("torus", 0.5)])
def test_recipes_verify(name, k):
    rec = stability.build_profiles(systems.make_system(name), k)
    rep = stability.verify_stabilizing(rec, samples=64)
    assert rep.min_pairing > 0 and rep.max_residual < 1e-8


@pytest.mark.parametrize("name,k", [("heisenberg", 0.5), ("psl2", 0.25), ("psl2", 0.5)])
def test_unstable_levels(name, k):
    with pytest.raises(NotStable):
        stability.build_profiles(systems.make_system(name), k)


def test_recipe_preconditions(heis):
    with pytest.raises(ValueError):
        stability.build_profiles(heis, 0.0)
    with pytest.raises(Unsupported):
        stability.build_profiles(systems.make_system("nil4"), 0.3)


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_sol_form_pairing_identity(vals):
    sol = systems.make_system("sol")
    s = PhaseState(np.array(vals[:3]), np.array(vals[3:]))
    k = systems.hamiltonian(s.p, sol)
    assert systems.form_pairing("lambda_sol", s, sol) == pytest.approx(k + s.p[2] ** 2 / 2, abs=1e-12)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_torus_form_pairing_with_kernel(p):
    J = np.zeros((3, 3))
    J[0, 1], J[1, 0] = 1.5, -1.5
    t3 = systems.MagneticSystem.torus(J)
    s = PhaseState(np.zeros(3), np.array(p))
    # |P_ker p|^2 + |P_im p|^2 / 2
    assert systems.form_pairing("lambda_torus", s, t3) == pytest.approx(p[2] ** 2 + 0.5 * (p[0] ** 2 + p[1] ** 2),
                                                                         abs=1e-12)


def test_cone_combination(heis):
    a = stability.build_profiles(heis, 0.3)
    b = stability.build_profiles(heis, 0.3, width=0.05)
    cone = stability.ConeCombination([(1.0, a), (2.5, b)])
    rep = stability.verify_stabilizing(cone, samples=32)
    assert rep.min_pairing > 0
    with pytest.raises(ValueError):
        stability.ConeCombination([(-1.0, a)])
    with pytest.raises(ValueError):
        stability.ConeCombination([(1.0, a), (1.0, stability.build_profiles(heis, 0.2))])


def test_verification_failure_reports_worst_point(heis):
    rec = stability.build_profiles(heis, 0.3)
    with pytest.raises(VerificationFailure) as exc:
        stability.verify_stabilizing(rec, samples=16, pairing_floor=1.0)
    assert exc.value.worst is not None


@given(st.floats(0.01, 3), st.sampled_from(["heisenberg", "psl2"]))
def test_contact_margin_and_witnesses(k, name):
    s = systems.make_system(name)
    d = stability.contact_diagnostic(s, k)
    r = math.sqrt(2 * k)
    assert d.margin == pytest.approx(2 * k - r, abs=1e-14)
    expected = {1: stability.Verdict.CONTACT, -1: stability.Verdict.NOT_CONTACT, 0: stability.Verdict.BOUNDARY}
    assert d.verdict is expected[(2 * k > r) - (2 * k < r)]
    # psi(X_H) is constant along the vertical orbits
    assert d.witness_integrals == pytest.approx((2 * k - r, 2 * k + r), abs=1e-12)


def test_contact_boundary_and_support(psl2, torus):
    assert stability.contact_diagnostic(psl2, 0.5).verdict is stability.Verdict.BOUNDARY
    with pytest.raises(Unsupported):
        stability.contact_diagnostic(torus, 0.5)
    with pytest.raises(ValueError):
        stability.contact_diagnostic(psl2, -1.0)


def test_virtual_contact(psl2, heis):
    rep = stability.virtual_contact_bound(psl2, 0.4, samples=16, t_max=10, per_orbit=50)
    assert rep.epsilon == pytest.approx(math.sqrt(0.8) - math.sqrt(0.5))
    assert rep.sampled_min >= rep.bound
    assert rep.analytic_min >= rep.bound
    with pytest.raises(PreconditionFailed):
        stability.virtual_contact_bound(psl2, 0.2)
    with pytest.raises(Unsupported):
        stability.virtual_contact_bound(heis, 0.6)


@given(st.floats(0.01, 3))
def test_nil4_pairing(k):
    out = stability.nil4_check(k, samples=64)
    assert out["max_formula_gap"] < 1e-12
    assert out["min_pairing"] > 0


def test_recipe_summary_keys(heis):
    s = stability.build_profiles(heis, 0.3).summary()
    assert s["kind"] == "profile" and s["bump_centre"] == pytest.approx(-0.6)
