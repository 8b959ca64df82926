"""Critical value estimates.

Upper bounds come from explicit primitives theta of the magnetic form,
c <= sup_q H(q, theta_q).  Lower bounds come from parametric families of
closed curves with negative action A_{L+k}; the largest such k is bracketed by
bisection.  The estimate only reports a two-sided value when both sides carry
a certificate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import stability, systems
from .errors import InvalidForm
from .lie_core import Family
from .systems import CurveSamples, MagneticSystem, OneFormId

PSL2_RADII = np.linspace(0.05, 60.0, 1200)
TORUS_RADII = (5.0, 10.0, 20.0)
HEISENBERG_AREAS = np.geomspace(1e-2, 1e12, 400)


# -- upper bounds --------------------------------------------------------------

def _config_points(system: MagneticSystem, radius: float, n: int, rng) -> np.ndarray:
    d = system.dim
    pts = rng.uniform(-radius, radius, (n, d))
    if system.family is Family.PSL2:
        pts[:, 1] = np.exp(rng.uniform(-math.log1p(radius), math.log1p(radius), n))
    return pts


def _energy_of_form(form, q, system) -> float:
    # left-trivialised momentum p = E^T theta with the closed-form frame E = F^-1
    p = systems.frame(q, system).T @ systems.config_form(form, q, system)
    return float(systems.hamiltonian(p, system))


def _check_primitive(form, system, pts) -> None:
    h = 1e-30
    for q in pts[:8]:
        K = np.empty((system.dim, system.dim))
        for a in range(system.dim):
            qc = q.astype(complex)
            qc[a] += 1j * h
            K[:, a] = systems.config_form(form, qc, system).imag / h
        F = systems.coframe(q, system)
        if np.max(np.abs((K.T - K) - F.T @ system.sigma @ F)) > 1e-9:
            raise InvalidForm(f"{OneFormId(form).value} is not a primitive of the magnetic form")


def primitive_upper_bound(system: MagneticSystem, form) -> float:
    """sup over the configuration space of H(theta_q); inf if the samples grow
    without bound."""
    form = systems.check_form(form, system)
    if form not in systems.CONFIG_FORMS:
        raise InvalidForm(f"{form.value} is not a configuration-space form")
    rng = np.random.default_rng(0)
    pts = _config_points(system, 1.0, 64, rng)
    _check_primitive(form, system, pts)
    sups = []
    for radius in (1.0, 10.0, 100.0, 1000.0):
        pts = _config_points(system, radius, 256, rng)
        sups.append(max(_energy_of_form(form, q, system) for q in pts))
    if sups[-1] > 1e3 * max(sups[0], 1e-12) and sups[-1] > sups[-2] > sups[-3]:
        return math.inf
    return float(max(sups))


# -- curve families ------------------------------------------------------------

def circle_family_action(k: float, r: float) -> float:
    """Action of the hyperbolic circle of radius r traversed at speed sqrt(2k)
    with the bounded primitive delta."""
    if r < 0 or k <= 0:
        raise ValueError("need r >= 0 and k > 0")
    return 2 * math.pi * (math.sqrt(2 * k) * math.sinh(r) - (math.cosh(r) - 1) / math.sqrt(2))


def torus_circle_action(k: float, R: float) -> float:
    """Clockwise circle of radius R at speed sqrt(2k) on the flat torus cover."""
    return 2 * math.pi * R * math.sqrt(2 * k) - math.pi * R * R


def heisenberg_lift_period(k: float, a: float) -> float:
    return math.sqrt((4 * math.pi * a + a * a) / (2 * k))


def heisenberg_lift_action(k: float, a: float) -> float:
    """Horizontal circle enclosing area a whose vertical component keeps the
    gamma-velocity constant, run over the period that minimises the action."""
    return math.sqrt(2 * k * (4 * math.pi * a + a * a)) - a


def heisenberg_lift_curve(k: float, a: float, n: int = 512) -> CurveSamples:
    T = heisenberg_lift_period(k, a)
    rho = math.sqrt(a / math.pi)
    om = 2 * math.pi / T
    t = np.linspace(0.0, T, n + 1)
    c, s = np.cos(om * t), np.sin(om * t)
    pts = np.stack([rho * c, rho * s, 0.25 * rho * rho * np.sin(2 * om * t)], axis=1)
    vel = np.stack([-rho * om * s, rho * om * c, 0.5 * rho * rho * om * np.cos(2 * om * t)], axis=1)
    pts[-1] = pts[0]
    return CurveSamples(t, pts, vel)


class CurveFamily(str, enum.Enum):
    PSL2_CIRCLES = "psl2-circles"
    TORUS_CIRCLES = "torus-circles"
    HEISENBERG_LIFT = "heisenberg-lift"


_FAMILY_SYSTEM = {
    CurveFamily.PSL2_CIRCLES: Family.PSL2,
    CurveFamily.TORUS_CIRCLES: Family.TORUS,
    CurveFamily.HEISENBERG_LIFT: Family.HEISENBERG,
}

_FAMILY_PRIMITIVE = {
    CurveFamily.PSL2_CIRCLES: OneFormId.DELTA_PSL2,
    CurveFamily.TORUS_CIRCLES: OneFormId.BETA_TORUS,
    CurveFamily.HEISENBERG_LIFT: OneFormId.GAMMA,
}

DEFAULT_FAMILY = {fam: cf for cf, fam in _FAMILY_SYSTEM.items()}


def family_minimum(family: CurveFamily, k: float) -> tuple[float, dict]:
    """Smallest action over the family's parameter grid and its parameters."""
    family = CurveFamily(family)
    if family is CurveFamily.PSL2_CIRCLES:
        vals = [circle_family_action(k, r) for r in PSL2_RADII]
        i = int(np.argmin(vals))
        neg = [j for j, v in enumerate(vals) if v < 0]
        j = neg[0] if neg else i
        return vals[j], {"r": float(PSL2_RADII[j]), "speed": math.sqrt(2 * k)}
    if family is CurveFamily.TORUS_CIRCLES:
        vals = [torus_circle_action(k, R) for R in TORUS_RADII]
        i = int(np.argmin(vals))
        return vals[i], {"R": TORUS_RADII[i], "speed": math.sqrt(2 * k)}
    vals = [heisenberg_lift_action(k, a) for a in HEISENBERG_AREAS]
    neg = [j for j, v in enumerate(vals) if v < 0]
    i = neg[0] if neg else int(np.argmin(vals))
    a = float(HEISENBERG_AREAS[i])
    return vals[i], {"area": a, "period": heisenberg_lift_period(k, a)}


def witness_curve(family: CurveFamily, k: float, params: dict, n: int = 1024) -> CurveSamples:
    family = CurveFamily(family)
    if family is CurveFamily.PSL2_CIRCLES:
        return systems.geodesic_circle_psl2(k, params["r"], n)
    if family is CurveFamily.TORUS_CIRCLES:
        return systems.circle_curve_torus(params["R"], params["speed"], n)
    return heisenberg_lift_curve(k, params["area"], n)


def witness_samples(family: CurveFamily, params: dict) -> int:
    """Sample count for quadrature of a witness.  Large hyperbolic circles pass
    close to the boundary and need about e^r nodes."""
    if CurveFamily(family) is CurveFamily.PSL2_CIRCLES:
        return int(2 ** min(20, max(10, math.ceil(math.log2(64 * math.exp(params["r"]))))))
    return 1024


def witness_action(system: MagneticSystem, family: CurveFamily, k: float, params: dict, n: int | None = None) -> float:
    """Re-evaluate a witness by quadrature of the Lagrangian action."""
    n = witness_samples(family, params) if n is None else n
    curve = witness_curve(family, k, params, n)
    return float(systems.lagrangian_action(curve, k, _FAMILY_PRIMITIVE[CurveFamily(family)], system).value)


# -- estimate ------------------------------------------------------------------

@dataclass(frozen=True)
class ManeEstimate:
    system: str
    family: str
    c_lower: float
    c_upper: float
    family_upper: float
    c0_lower: float | None
    c0_upper: float
    primitive: str
    witness: dict
    unbounded: bool = False
    check_witness: dict = field(default_factory=dict)
    certificates: dict = field(default_factory=dict)

    @property
    def gap_certified(self) -> bool:
        """c < c0 holds with certified bounds on both sides."""
        return self.c0_lower is not None and self.c_upper < self.c0_lower

    def to_json(self) -> dict:
        def num(x):
            return None if x is None or math.isinf(x) else x

        return {
            "system": self.system,
            "family": self.family,
            "c_lower": self.c_lower,
            "c_upper": num(self.c_upper),
            "family_upper": num(self.family_upper),
            "c0_lower": self.c0_lower,
            "c0_upper": num(self.c0_upper),
            "primitive": self.primitive,
            "witness": dict(self.witness),
            "check_witness": dict(self.check_witness),
            "unbounded": self.unbounded,
            "gap_certified": self.gap_certified,
            "certificates": dict(self.certificates),
        }


def contact_lower_bound(system: MagneticSystem, tol: float = 1e-12) -> float | None:
    """Largest k at which the contact diagnostic is not Contact; levels above c0
    are of contact type, so this bounds c0 from below."""
    if system.family not in (Family.HEISENBERG, Family.PSL2):
        return None
    lo, hi = 1e-6, 10.0
    if stability.contact_diagnostic(system, lo).verdict is stability.Verdict.CONTACT:
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stability.contact_diagnostic(system, mid).verdict is stability.Verdict.CONTACT:
            hi = mid
        else:
            lo = mid
    return lo


def critical_value_bisection(system: MagneticSystem, family=None, k_lo: float = 1e-3, k_hi: float = 10.0,
                             tol: float = 1e-3) -> ManeEstimate:
    family = DEFAULT_FAMILY[system.family] if family is None else CurveFamily(family)
    if _FAMILY_SYSTEM.get(family) is not system.family:
        raise InvalidForm(f"curve family {family.value} does not live on {system.family.value}")
    if not 0 < k_lo < k_hi:
        raise ValueError("need 0 < k_lo < k_hi")
    prim = _FAMILY_PRIMITIVE[family]
    c_up_prim = primitive_upper_bound(system, prim)
    # on these simply connected groups every primitive also bounds c0
    c0_prim = OneFormId.GAMMA if system.family in (Family.HEISENBERG, Family.PSL2) else prim
    c0_up = primitive_upper_bound(system, c0_prim)
    c0_lo = contact_lower_bound(system)
    certs = {"c_upper": f"primitive {prim.value}", "c0_upper": f"primitive {c0_prim.value}"}
    if c0_lo is not None:
        certs["c0_lower"] = "non-contact levels below this energy"

    v_hi, w_hi = family_minimum(family, k_hi)
    if v_hi < 0:
        certs["c_lower"] = "negative action witness at the search ceiling"
        return ManeEstimate(system.name, family.value, k_hi, c_up_prim, math.inf, c0_lo, c0_up, prim.value,
                            {**w_hi, "k": k_hi, "action": v_hi}, unbounded=True, certificates=certs)
    v_lo, w_lo = family_minimum(family, k_lo)
    if v_lo >= 0:
        return ManeEstimate(system.name, family.value, 0.0, c_up_prim, k_lo, c0_lo, c0_up, prim.value,
                            {}, certificates=certs)
    lo, hi, wit = k_lo, k_hi, {**w_lo, "k": k_lo, "action": v_lo}
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        v, w = family_minimum(family, mid)
        if v < 0:
            lo, wit = mid, {**w, "k": mid, "action": v}
        else:
            hi = mid
    certs["c_lower"] = "negative action witness"
    # the witness at the bracket end can be huge; keep one a tolerance lower
    # that quadrature can re-check cheaply
    kc = max(lo - tol, k_lo)
    vc, wc = family_minimum(family, kc)
    check = {**wc, "k": kc, "action": vc} if vc < 0 else {}
    return ManeEstimate(system.name, family.value, lo, c_up_prim, hi, c0_lo, c0_up, prim.value, wit,
                        certificates=certs, check_witness=check)
