"""Closed contractible orbits, orbit-type classification, Lyapunov exponents,
the entropy threshold and displacement probes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import integrate as _integrate
from . import lie_core, systems
from .errors import NoConvergence, PreconditionFailed, Unsupported, VerificationFailure
from .lie_core import PARABOLIC_BAND, Family
from .systems import MagneticSystem, OneFormId, PhaseState

RETURN_TOL = 1e-8
CLOSURE_TOL = 1e-6
OMEGA_SAMPLES = 256


@dataclass(frozen=True)
class ClosedOrbitRecord:
    system: str
    k: float
    C: float
    A: float
    mu: float
    T: float  # primitive period
    l: int
    omega: float
    contractible: bool
    homotopy: tuple[int, int] | None
    direction: int = 1
    start: PhaseState | None = field(default=None, repr=False, compare=False)

    @property
    def period(self) -> float:
        return self.l * self.T

    def to_json(self) -> dict:
        return {
            "system": self.system,
            "k": self.k,
            "C": self.C,
            "A": self.A,
            "mu": self.mu,
            "T": self.T,
            "l": self.l,
            "omega": self.omega,
            "contractible": self.contractible,
            "homotopy": None if self.homotopy is None else list(self.homotopy),
        }


def sample_orbit(s: PhaseState, t: float, system: MagneticSystem, n: int = OMEGA_SAMPLES) -> _integrate.Trajectory:
    """Closed-form flow sampled at n+1 uniform times on [0, t] (falls back to
    RK4 for systems without a closed form)."""
    times = np.linspace(0.0, t, n + 1)
    try:
        states = np.array([systems.closed_form_flow(s, ti, system).z for ti in times])
        return _integrate.Trajectory(times, states, "closed-form", t / n)
    except Unsupported:
        dt = t / n / 64
        return _integrate.integrate(s, t, dt, system, record_every=64)


def omega_energy(orbit: _integrate.Trajectory, system: MagneticSystem, gap_tol: float = CLOSURE_TOL) -> float:
    """Integral of the chart primitive of the symplectic form over a closed
    lifted orbit, by the periodic trapezoid rule on uniform samples."""
    if len(orbit) == 1 or orbit.times[-1] == orbit.times[0]:
        return 0.0
    gap = float(np.max(np.abs(orbit.states[-1] - orbit.states[0])))
    if gap > gap_tol:
        raise PreconditionFailed(f"loop is not closed in the cover (gap {gap:.3g})")
    vals = np.array([systems.form_pairing(OneFormId.PRIMITIVE, orbit.state(i), system) for i in range(len(orbit))])
    return float(np.trapezoid(vals, orbit.times))


def _returns(s: PhaseState, t: float, system: MagneticSystem) -> float:
    end = systems.closed_form_flow(s, t, system)
    return float(np.max(np.abs(end.z - s.z)))


def _heisenberg_orbits(system, k, l_max):
    # the degenerate circle p_gamma = -1 needs k >= 1/2 and is excluded
    if not 0 < k < 0.5:
        return []
    C = math.sqrt(1 - 2 * k) - 1
    A = math.sqrt(max(2 * k - C * C, 0.0))
    mu = 1 + C
    T = 2 * math.pi / abs(mu)
    return [(C, A, mu, T, PhaseState(np.zeros(3), np.array([A, 0.0, C])))]


def _psl2_orbits(system, k, l_max):
    # closed orbits need the rotation rate of e^{td} to match that of Q(t)
    disc = 1 - 4 * k
    if disc <= 0:
        return []
    s = math.sqrt(disc)
    out = []
    for C in ((-1 + s) / 2, (-1 - s) / 2):
        a2 = 2 * k - C * C
        if a2 < -1e-14:
            continue
        A = math.sqrt(max(a2, 0.0))
        mu = -1 - 2 * C
        T = 2 * math.pi / abs(mu)
        out.append((C, A, mu, T, PhaseState(np.array([0.0, 1.0, 0.0]), np.array([A, 0.0, C]))))
    return out


def _torus_orbits(system, k, l_max):
    J = system.J
    w, v = np.linalg.eig(J)
    out, seen = [], []
    for lam, vec in zip(w, v.T):
        om = lam.imag
        if om <= 1e-10 or any(abs(om - o) < 1e-10 for o in seen):
            continue
        seen.append(om)
        p = np.real(vec)
        if np.linalg.norm(p) < 1e-12:
            p = np.imag(vec)
        p = p / math.sqrt(p @ system.metric @ p) * math.sqrt(2 * k)
        T = 2 * math.pi / om
        out.append((0.0, math.sqrt(2 * k), om, T, PhaseState(np.zeros(system.dim), p)))
    return out


def contractible_orbits(system: MagneticSystem, k: float, l_max: int = 5) -> list[ClosedOrbitRecord]:
    """Closed contractible orbits on the energy level k with multiplicity up
    to ``l_max``.  Every record is checked by flowing one full period."""
    if k <= 0:
        raise ValueError("k must be positive")
    if l_max < 1:
        raise ValueError("l_max must be at least 1")
    fam = system.family
    if fam is Family.HEISENBERG:
        cands = _heisenberg_orbits(system, k, l_max)
    elif fam is Family.PSL2:
        cands = _psl2_orbits(system, k, l_max)
    elif fam is Family.TORUS:
        cands = _torus_orbits(system, k, l_max)
    else:
        raise Unsupported(f"no orbit detector for {fam.value}")
    records = []
    for C, A, mu, T, start in cands:
        if _returns(start, T, system) > RETURN_TOL:
            continue  # does not close in the universal cover
        omega1 = omega_energy(sample_orbit(start, T, system), system)
        for l in range(1, l_max + 1):
            if l > 1 and _returns(start, l * T, system) > RETURN_TOL:
                continue
            records.append(ClosedOrbitRecord(
                system=system.name, k=float(k), C=float(C), A=float(A), mu=float(mu), T=float(T), l=l,
                omega=l * omega1, contractible=True,
                homotopy=(l, l) if fam is Family.PSL2 else None,
                direction=1 if mu > 0 else -1, start=start,
            ))
    return records


def psl2_lift_defect(C: float, A: float, t: float) -> tuple[float, float]:
    """(PSL(2,R) return distance, angle gap in the universal cover) after time t."""
    system = MagneticSystem.psl2()
    s = PhaseState(np.array([0.0, 1.0, 0.0]), np.array([A, 0.0, C]))
    g0 = systems.chart_to_group(s.q, system).matrix
    g, _ = systems.psl2_flow_matrix(g0, s.p, t)
    d = lie_core.GroupElement(Family.PSL2, g).distance(lie_core.GroupElement(Family.PSL2, g0))
    end = systems.closed_form_flow(s, t, system)
    return d, float(abs(end.q[2] - s.q[2]))


# -- classification and entropy ------------------------------------------------

class OrbitType(str, enum.Enum):
    ELLIPTIC = "elliptic"
    PARABOLIC = "parabolic"
    HYPERBOLIC = "hyperbolic"


def classify_psl2(C: float, A: float) -> OrbitType:
    if A < 0:
        raise ValueError("A must be non-negative")
    disc = (1 + C) ** 2 - A * A
    if abs(disc) < PARABOLIC_BAND:
        return OrbitType.PARABOLIC
    return OrbitType.ELLIPTIC if disc > 0 else OrbitType.HYPERBOLIC


def entropy_margin(k: float, grid: int = 2001) -> float:
    """min of 2C^2 + 2C + 1 - 2k over |C| <= sqrt(2k), analytic with a grid check."""
    if k <= 0:
        raise ValueError("k must be positive")
    r = math.sqrt(2 * k)
    c_star = min(max(-0.5, -r), r)
    exact = 2 * c_star * c_star + 2 * c_star + 1 - 2 * k
    cs = np.linspace(-r, r, grid)
    sampled = float(np.min(2 * cs * cs + 2 * cs + 1 - 2 * k))
    if sampled < exact - 1e-12:
        raise AssertionError("grid minimum undercuts the analytic minimum")
    return exact


def entropy_threshold(k: float) -> bool:
    """True when no momentum on the level k gives a hyperbolic flow."""
    return entropy_margin(k) >= 0.0


# -- Lyapunov exponents --------------------------------------------------------

@dataclass(frozen=True)
class LyapunovEstimate:
    exponent: float
    stderr: float
    late_exponent: float
    converged: bool
    projection_residual: float

    def __float__(self):
        return self.exponent


def _initial_frame(s: PhaseState, system: MagneticSystem):
    d = system.dim
    g = systems.chart_to_group(s.q, system).matrix
    basis = lie_core.algebra_basis(system.family, d)
    mom = _integrate.level_set_directions(s.p, system)
    dG = [g @ b for b in basis] + [np.zeros_like(g)] * mom.shape[1]
    dP = [np.zeros(d)] * d + list(mom.T)
    return np.array(dG), np.array(dP)


def lyapunov_exponent(system: MagneticSystem, s: PhaseState, t_max: float = 200.0, dt: float = 1e-2,
                      strict: bool = False, tol: float = 1e-2) -> LyapunovEstimate:
    """Top exponent from the least-squares slope of the accumulated QR growth of
    the linearised flow, restricted to the joint level set of the energy and the
    Casimir so that neutral shear along the orbit family is excluded."""
    if t_max <= 0 or dt <= 0:
        raise ValueError("t_max and dt must be positive")
    hist = _integrate.matrix_variational_flow(s, t_max, dt, system, _initial_frame(s, system))
    t, y = hist.times, hist.log_growth[:, 0]
    slope, se = _slope(t, y)
    half = t >= t[-1] / 2
    late, _ = _slope(t[half], y[half])
    ok = abs(late - slope) <= tol
    if strict and not ok:
        raise NoConvergence(f"exponent estimate not stable: {slope:.4g} vs late {late:.4g}")
    return LyapunovEstimate(float(slope), float(se), float(late), ok, hist.projection_residual)


def _slope(t, y):
    A = np.vstack([t, np.ones_like(t)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    n = len(t)
    if n > 2:
        sigma2 = float(np.sum((A @ coef - y) ** 2)) / (n - 2)
        se = math.sqrt(sigma2 / float(np.sum((t - t.mean()) ** 2)))
    else:
        se = float("nan")
    return float(coef[0]), se


# -- displacement probes --------------------------------------------------------

@dataclass(frozen=True)
class DisplacementCertificate:
    system: str
    k: float
    probe: str
    exit_time: float
    observed_exit: float
    growth_coefficient: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _probe_linear(dh, system):
    """Momentum flow of the linear function <dh, p>: p' = M p + b."""
    c, sig = system.structure.c, system.sigma
    M = np.einsum("i,ijk->jk", dh, c)
    b = -dh @ sig
    return M, b


def _exit_times(P0, M, b, radius, t_cap, steps=4000):
    """First grid time at which |p| > radius under p' = M p + b, for each row
    of P0.  Uses the exact affine propagator on a uniform grid."""
    d = M.shape[0]
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d], aug[:d, d] = M, b
    h = t_cap / steps
    step = expm(h * aug)
    X = np.hstack([P0, np.ones((P0.shape[0], 1))]).T
    out = np.full(P0.shape[0], math.inf)
    for i in range(1, steps + 1):
        X = step @ X
        hit = np.isinf(out) & (np.linalg.norm(X[:d], axis=0) > radius)
        out[hit] = i * h
        if not np.any(np.isinf(out)):
            break
    return out


def _shell_points(system, k, n):
    rng = np.random.default_rng(0)
    d = system.dim
    L = np.linalg.cholesky(system.metric)
    pts = rng.standard_normal((n, d))
    # push a few extreme points in explicitly
    pts[: 2 * d] = np.vstack([np.eye(d), -np.eye(d)])
    out = []
    for x in pts:
        y = np.linalg.solve(L.T, x)
        out.append(y * math.sqrt(2 * k / (y @ system.metric @ y)))
    return np.array(out)


def displacement_probe(system: MagneticSystem, k: float, samples: int = 64, a=None) -> DisplacementCertificate:
    """Certify that the flow of a linear momentum function pushes every point
    of the energy level k out of the momentum ball of radius sqrt(2k) by a
    computed time bound."""
    if k <= 0:
        raise ValueError("k must be positive")
    r = math.sqrt(2 * k)
    fam = system.family
    if fam is Family.HEISENBERG:
        if k >= 0.5:
            raise PreconditionFailed("the Heisenberg probe needs k < 1/2")
        dh = np.array([1.0, 0.0, 0.0])
        growth = 1 - r
        bound = 2 * r / growth
        probe = "p_alpha"
    elif fam is Family.PSL2:
        if k >= 0.25:
            raise PreconditionFailed("the PSL(2,R) probe needs k < 1/4")
        dh = np.array([0.0, 1.0, 0.0])
        growth = 1 - 2 * math.sqrt(k)
        u = (r + math.sqrt(2 * k + growth * (1 + 2 * math.sqrt(k)))) / growth
        bound = math.log(u)
        probe = "p_beta"
    elif fam is Family.TORUS:
        J = system.J
        if np.allclose(J, 0):
            raise PreconditionFailed("the torus probe needs a non-zero magnetic form")
        if a is None:
            i = int(np.argmax(np.linalg.norm(J, axis=0)))
            a = np.eye(system.dim)[i]
        dh = np.asarray(a, dtype=float)
        growth = float(np.linalg.norm(J @ dh))
        if growth == 0:
            raise PreconditionFailed("J a vanishes; pick another direction")
        bound = 2 * r / growth
        probe = "<a,p>"
    else:
        raise Unsupported(f"no displacement probe for {fam.value}")
    M, b = _probe_linear(dh, system)
    # the ball in the metric norm; the built-ins use the identity metric
    worst = float(np.max(_exit_times(_shell_points(system, k, samples), M, b, r, 2 * bound + 1)))
    if not worst <= bound + 1e-3 * (2 * bound + 1):
        raise VerificationFailure(f"probe exit {worst} exceeds the bound {bound}", worst=worst)
    return DisplacementCertificate(system.name, float(k), probe, float(bound), float(worst), float(growth))
