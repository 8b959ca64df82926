"""Stabilizing one-forms, contact diagnostics and the virtual-contact bound.

On Heisenberg and PSL(2,R) the recipes have the form

    lambda = f(p_g) psi + g(p_g) phi

with psi the primitive p dq + gamma of the symplectic form and phi the angle
form in the (p_a, p_b) plane.  Because p_g is a Casimir and phi is closed,

    i_{X_H} d lambda = -(f' psi(X_H) + g' phi(X_H)) dp_g    on the level set,

so the profiles only need f'(p)(2k + p) + g'(p)(1 + c p) = 0 with c = 1
(Heisenberg) or c = 2 (PSL(2,R)), and lambda(X_H) > 0.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicHermiteSpline

from . import lie_core, systems
from .errors import NotStable, PreconditionFailed, Unsupported, VerificationFailure
from .lie_core import Family
from .systems import MagneticSystem, OneFormId, PhaseState

PROFILE_NODES = 2048
ODE_TOL = 1e-8
BUMP_FRACTION = 0.1


# -- bump profiles -------------------------------------------------------------

def _bump_width(k: float, c: int) -> float:
    r = math.sqrt(2 * k)
    centre = -2 * k
    w = BUMP_FRACTION * r
    w = min(w, 0.5 * (centre + r), 0.5 * (r - centre))
    if c == 2:
        w = min(w, 0.5 * abs(centre + 0.5))
    return w


def _bump_antiderivatives(w: float):
    s = Polynomial([0, 1])
    q = (1 - (s / w) ** 2) ** 3
    return q, q.integ(lbnd=0), (s * q).integ(lbnd=0)


@dataclass(frozen=True)
class Profile:
    """Cubic Hermite interpolant of a scalar profile and its derivative."""

    nodes: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    slopes: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_spline", CubicHermiteSpline(self.nodes, self.values, self.slopes, extrapolate=True))

    def __call__(self, x):
        return self._spline(x)

    def derivative(self, x):
        return self._spline(x, 1)

    @classmethod
    def constant(cls, value: float, lo: float, hi: float) -> "Profile":
        x = np.array([lo, hi])
        return cls(x, np.full(2, float(value)), np.zeros(2))


class RecipeKind(str, enum.Enum):
    PROFILE = "profile"  # f(p_g) psi + g(p_g) phi
    LAMBDA_TORUS = "lambda_torus"
    LAMBDA_SOL = "lambda_sol"


@dataclass(frozen=True)
class StabilizingFormRecipe:
    system: MagneticSystem = field(repr=False)
    k: float
    kind: RecipeKind
    f: Profile | None = field(default=None, repr=False)
    g: Profile | None = field(default=None, repr=False)
    coupling: int = 0  # c in phi(X_H) = 1 + c p_g
    bump_centre: float | None = None
    bump_width: float | None = None
    ode_residual: float = 0.0

    @property
    def phi_form(self) -> OneFormId:
        return OneFormId.PHI_HEIS if self.system.family is Family.HEISENBERG else OneFormId.PHI_PSL2

    def covector(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.kind is not RecipeKind.PROFILE:
            return systems.form_covector(self.kind.value, z, self.system)
        pg = z[-1]
        out = float(self.f(pg)) * systems.form_covector(OneFormId.PSI, z, self.system)
        gv = float(self.g(pg))
        if gv != 0.0:
            out = out + gv * systems.form_covector(self.phi_form, z, self.system)
        return out

    def differential(self, z) -> np.ndarray:
        """Matrix of d lambda at z, assembled from the profile structure."""
        z = np.asarray(z, dtype=float)
        if self.kind is not RecipeKind.PROFILE:
            return systems.form_differential(self.kind.value, z, self.system)
        pg = z[-1]
        e = np.zeros_like(z)
        e[-1] = 1.0
        psi = systems.form_covector(OneFormId.PSI, z, self.system)
        M = float(self.f(pg)) * systems.form_differential(OneFormId.PSI, z, self.system)
        M += float(self.f.derivative(pg)) * (np.outer(e, psi) - np.outer(psi, e))
        gp = float(self.g.derivative(pg))
        if gp != 0.0:
            phi = systems.form_covector(self.phi_form, z, self.system)
            M += gp * (np.outer(e, phi) - np.outer(phi, e))
        return M

    def pairing(self, z) -> float:
        return float(self.covector(z) @ systems.rhs(np.asarray(z, dtype=float), self.system))

    def summary(self) -> dict:
        return {
            "system": self.system.name,
            "k": self.k,
            "kind": self.kind.value,
            "coupling": self.coupling,
            "bump_centre": self.bump_centre,
            "bump_width": self.bump_width,
            "ode_residual": self.ode_residual,
        }


def _nodes(lo, hi, a, b, n):
    n_in = int(0.75 * n)
    n_out = (n - n_in) // 2
    left = np.linspace(lo, a, n_out, endpoint=False)
    mid = np.linspace(a, b, n_in, endpoint=False)
    right = np.linspace(b, hi, n - n_in - n_out)
    return np.concatenate([left, mid, right])


def _profile_recipe(system, k, c, width=None, nodes=PROFILE_NODES):
    r = math.sqrt(2 * k)
    centre = -2 * k
    w = _bump_width(k, c) if width is None else width
    sign = 1.0 if 1 + c * centre > 0 else -1.0
    q, Q0, Q1 = _bump_antiderivatives(w)
    base = 1 - 2 * c * k  # 1 + c t at t = -2k

    def exact(t):
        s = np.clip(t + 2 * k, -w, w)
        inside = np.abs(t + 2 * k) < w
        qs = np.where(inside, q(s), 0.0)
        f = sign * (base * Q0(s) + c * Q1(s))
        fp = sign * (base + c * (t + 2 * k)) * qs
        g = -sign * (Q1(s) - Q1(w))
        gp = -sign * (t + 2 * k) * qs
        return f, fp, g, gp

    x = _nodes(-r, r, centre - w, centre + w, nodes)
    f, fp, g, gp = exact(x)
    F, G = Profile(x, f, fp), Profile(x, g, gp)
    mids = 0.5 * (x[1:] + x[:-1])
    res = float(np.max(np.abs(F.derivative(mids) * (2 * k + mids) + G.derivative(mids) * (1 + c * mids))))
    if res > ODE_TOL:
        raise VerificationFailure(f"profile equation residual {res:.3g} exceeds {ODE_TOL}", worst=res)
    return StabilizingFormRecipe(system, float(k), RecipeKind.PROFILE, F, G, c, centre, w, res)


def _psi_recipe(system, k):
    r = math.sqrt(2 * k)
    c = 1 if system.family is Family.HEISENBERG else 2
    return StabilizingFormRecipe(system, float(k), RecipeKind.PROFILE,
                                 Profile.constant(1.0, -r, r), Profile.constant(0.0, -r, r), c)


def build_profiles(system: MagneticSystem, k: float, width: float | None = None) -> StabilizingFormRecipe:
    if k <= 0:
        raise ValueError("k must be positive")
    fam = system.family
    if fam is Family.TORUS:
        return StabilizingFormRecipe(system, float(k), RecipeKind.LAMBDA_TORUS)
    if fam is Family.SOL:
        return StabilizingFormRecipe(system, float(k), RecipeKind.LAMBDA_SOL)
    if fam is Family.HEISENBERG:
        if k == 0.5:
            raise NotStable("the Heisenberg level k = 1/2 is not stable")
        return _psi_recipe(system, k) if k > 0.5 else _profile_recipe(system, k, 1, width)
    if fam is Family.PSL2:
        if k in (0.25, 0.5):
            raise NotStable(f"the PSL(2,R) level k = {k} is not stable")
        return _psi_recipe(system, k) if k > 0.5 else _profile_recipe(system, k, 2, width)
    raise Unsupported(f"no stabilizing recipe for {fam.value}")


# -- verification --------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    min_pairing: float
    max_residual: float
    worst_point: list
    samples: int

    def as_dict(self):
        return dict(self.__dict__)


class ConeCombination:
    """Positive combination of recipes at the same level."""

    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise ValueError("empty combination")
        if any(a <= 0 for a, _ in terms):
            raise ValueError("coefficients must be positive")
        sys0, k0 = terms[0][1].system, terms[0][1].k
        if any(r.system.family is not sys0.family or r.k != k0 for _, r in terms):
            raise ValueError("recipes must share system and level")
        self.terms, self.system, self.k = terms, sys0, k0

    def covector(self, z):
        return sum(a * r.covector(z) for a, r in self.terms)

    def differential(self, z):
        return sum(a * r.differential(z) for a, r in self.terms)

    def pairing(self, z):
        return float(self.covector(z) @ systems.rhs(np.asarray(z, dtype=float), self.system))


def shell_samples(system: MagneticSystem, k: float, n: int, rng=None, focus=None) -> np.ndarray:
    """Random phase points on H = k; with ``focus`` = (centre, width) half of the
    samples have p_g drawn inside that window."""
    rng = np.random.default_rng(0) if rng is None else rng
    d = system.dim
    r = math.sqrt(2 * k)
    out = np.empty((n, 2 * d))
    L = np.linalg.cholesky(system.metric)
    for i in range(n):
        if system.family is Family.PSL2:
            q = np.array([rng.uniform(-2, 2), math.exp(rng.uniform(-1.5, 1.5)), rng.uniform(-6, 6)])
        else:
            q = rng.uniform(-2, 2, d)
        if focus is not None and i % 2 == 0 and system.family in (Family.HEISENBERG, Family.PSL2):
            c, w = focus
            pg = float(np.clip(c + rng.uniform(-1.2, 1.2) * w, -r, r))
            a = rng.uniform(0, 2 * math.pi)
            rho = math.sqrt(max(2 * k - pg * pg, 0.0))
            p = np.array([rho * math.cos(a), rho * math.sin(a), pg])
        else:
            y = np.linalg.solve(L.T, rng.standard_normal(d))
            p = y * math.sqrt(2 * k / (y @ system.metric @ y))
        out[i] = np.concatenate([q, p])
    return out


def _tangent_vectors(z, system, m, rng):
    g = systems.grad_hamiltonian(z, system)
    V = rng.standard_normal((m, z.shape[0]))
    V -= np.outer(V @ g, g) / (g @ g)
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def verify_stabilizing(recipe, samples: int = 256, tangents: int = 4, rng=None,
                       pairing_floor: float = 0.0, residual_tol: float = ODE_TOL, strict: bool = True) -> StabilityReport:
    """Minimum of lambda(X_H) and maximum of |d lambda(X_H, v)| over sampled
    level-set points and tangent vectors v."""
    rng = np.random.default_rng(1) if rng is None else rng
    system, k = recipe.system, recipe.k
    focus = None
    if getattr(recipe, "bump_width", None):
        focus = (recipe.bump_centre, recipe.bump_width)
    Z = shell_samples(system, k, samples, rng, focus)
    min_pair, max_res, at_min, at_res = math.inf, 0.0, None, None
    for z in Z:
        if recipe_has_singular_phi(recipe, z):
            continue
        x = systems.rhs(z, system)
        pair = float(recipe.covector(z) @ x)
        M = recipe.differential(z)
        res = float(np.max(np.abs(_tangent_vectors(z, system, tangents, rng) @ (M.T @ x))))
        if pair < min_pair:
            min_pair, at_min = pair, z.tolist()
        if res > max_res:
            max_res, at_res = res, z.tolist()
    worst = at_res if max_res >= residual_tol else at_min
    scan = profile_pairing_scan(recipe)
    if scan is not None and scan[0] < min_pair:
        min_pair, at_min = scan
        worst = at_res if max_res >= residual_tol else at_min
    report = StabilityReport(min_pair, max_res, worst, samples)
    if strict and (not min_pair > pairing_floor or not max_res < residual_tol):
        raise VerificationFailure(
            f"stabilizing check failed: min pairing {min_pair:.3g}, residual {max_res:.3g}", worst=worst)
    return report


def profile_pairing_scan(recipe, n: int = 20001):
    """For profile recipes lambda(X_H) depends on p_g only; scan it densely.
    Returns (minimum, [p_g]) or None for other recipe kinds."""
    terms = recipe.terms if isinstance(recipe, ConeCombination) else [(1.0, recipe)]
    if any(r.kind is not RecipeKind.PROFILE for _, r in terms):
        return None
    k = terms[0][1].k
    r = math.sqrt(2 * k)
    t = np.linspace(-r, r, n)
    extra = []
    for _, rec in terms:
        if rec.bump_width:
            extra.append(np.linspace(rec.bump_centre - 1.1 * rec.bump_width, rec.bump_centre + 1.1 * rec.bump_width, n))
    t = np.clip(np.concatenate([t, *extra]), -r, r)
    vals = sum(a * (rec.f(t) * (2 * k + t) + rec.g(t) * (1 + rec.coupling * t)) for a, rec in terms)
    i = int(np.argmin(vals))
    return float(vals[i]), [float(t[i])]


def recipe_has_singular_phi(recipe, z) -> bool:
    # phi is singular on p_a = p_b = 0 where the profiles require g = 0
    terms = recipe.terms if isinstance(recipe, ConeCombination) else [(1.0, recipe)]
    for _, r in terms:
        if r.kind is RecipeKind.PROFILE and z[-3] ** 2 + z[-2] ** 2 < 1e-20:
            return True
    return False


# -- contact diagnostics -------------------------------------------------------

class Verdict(str, enum.Enum):
    CONTACT = "contact"
    NOT_CONTACT = "not_contact"
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class ContactDiagnosis:
    verdict: Verdict
    margin: float
    witness_integrals: tuple[float, float]
    liouville_pairing: float
    tau: float

    def as_dict(self):
        return {
            "verdict": self.verdict.value,
            "margin": self.margin,
            "witness_integrals": list(self.witness_integrals),
            "liouville_pairing": self.liouville_pairing,
            "tau": self.tau,
        }


def _orbit_integral(system, k, sign, tau, n=64):
    p = np.array([0.0, 0.0, sign * math.sqrt(2 * k)])
    q = np.array([0.0, 1.0, 0.0]) if system.family is Family.PSL2 else np.zeros(3)
    s = PhaseState(q, p)
    ts = np.linspace(0.0, tau, n + 1)
    vals = [systems.form_pairing(OneFormId.PSI, systems.closed_form_flow(s, t, system), system) for t in ts]
    return float(np.trapezoid(vals, ts))


def contact_diagnostic(system: MagneticSystem, k: float, tau: float = 1.0) -> ContactDiagnosis:
    """Contact if min psi(X_H) = 2k - sqrt(2k) > 0; otherwise the two vertical
    orbits p_g = -+sqrt(2k) give invariant measures pairing with psi with
    opposite signs."""
    if k <= 0:
        raise ValueError("k must be positive")
    if system.family not in (Family.HEISENBERG, Family.PSL2):
        raise Unsupported(f"contact diagnostic is defined for heisenberg and psl2, not {system.family.value}")
    margin = 2 * k - math.sqrt(2 * k)
    if margin > 0:
        verdict = Verdict.CONTACT
    elif margin < 0:
        verdict = Verdict.NOT_CONTACT
    else:
        verdict = Verdict.BOUNDARY
    w = (_orbit_integral(system, k, -1, tau), _orbit_integral(system, k, 1, tau))
    if verdict is Verdict.NOT_CONTACT and not (w[0] <= 0 <= w[1]):
        raise VerificationFailure("orbit witnesses do not have opposite signs", worst=w)
    return ContactDiagnosis(verdict, margin, w, 2 * k, tau)


# -- virtual contact ----------------------------------------------------------

@dataclass(frozen=True)
class VirtualContactReport:
    k: float
    epsilon: float
    bound: float
    analytic_min: float
    sampled_min: float
    samples: int

    def as_dict(self):
        return dict(self.__dict__)


def virtual_contact_bound(system: MagneticSystem, k: float, samples: int = 64, t_max: float = 20.0,
                          per_orbit: int = 200, rng=None) -> VirtualContactReport:
    """Lower bound eps^2 for (p dq + delta)(X_H) on the cover, eps = sqrt(2k) - |delta|."""
    if system.family is not Family.PSL2:
        raise Unsupported("virtual contact bound is implemented for psl2")
    if k <= 0.25:
        raise PreconditionFailed("needs k above the primitive bound 1/4")
    eps = math.sqrt(2 * k) - math.sqrt(0.5)
    rng = np.random.default_rng(2) if rng is None else rng
    starts = shell_samples(system, k, samples, rng)
    # the two vertical orbits and the pairing minimiser are included explicitly
    extra = []
    for pg in (-math.sqrt(2 * k), math.sqrt(2 * k), -math.sqrt(0.5 * k)):
        rho = math.sqrt(max(2 * k - pg * pg, 0.0))
        extra.append([0.0, 1.0, 0.0, -rho, 0.0, pg])
    lo = math.inf
    ts = np.linspace(0.0, t_max, per_orbit)
    for z in np.vstack([starts, extra]):
        s = PhaseState.from_z(z)
        for t in ts:
            lo = min(lo, systems.form_pairing(OneFormId.LIOUVILLE_DELTA, systems.closed_form_flow(s, t, system), system))
    return VirtualContactReport(float(k), eps, eps * eps, 2 * k - math.sqrt(k), float(lo), len(starts) + len(extra))


# -- four-dimensional nilpotent example ----------------------------------------

_NIL4 = MagneticSystem.nil4()


def nil4_phi_pairing(mu) -> float:
    """(theta + d(x2 x4)/2)(E_H) on the dual of the 4-dimensional nilpotent
    algebra, assembled from the form coefficients."""
    x1, x2, x3, x4 = (float(v) for v in mu)
    E = lie_core.euler_field(np.array([x1, x2, x3, x4]), _NIL4)
    theta = 0.5 * np.array([-x3, -x4, x1, x2]) - np.array([0.0, 0.0, 0.0, 0.5 * x3 * x3])
    d24 = 0.5 * np.array([0.0, x4, 0.0, x2])
    return float((theta + d24) @ E)


def nil4_check(k: float, samples: int = 512, rng=None) -> dict:
    rng = np.random.default_rng(3) if rng is None else rng
    X = rng.standard_normal((samples, 4))
    X *= math.sqrt(2 * k) / np.linalg.norm(X, axis=1, keepdims=True)
    vals = np.array([nil4_phi_pairing(x) for x in X])
    closed = 0.5 * (X[:, 0] ** 2 + 2 * X[:, 1] ** 2 + X[:, 2] ** 2)
    return {"k": k, "min_pairing": float(vals.min()), "max_formula_gap": float(np.max(np.abs(vals - closed)))}
