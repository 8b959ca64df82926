"""Magnetic systems on twisted cotangent bundles of the model groups.

Phase space is trivialised by left translation, T*G = G x g*.  A state is a
point ``q`` of a chart on the universal cover together with momenta ``p``
in the left-invariant dual frame.  Charts:

    torus       q in R^n
    heisenberg  (x, y, z), group law (x,y,z)(x',y',z') = (x+x', y+y', z+z'+xy')
    psl2        (x, y, theta) with y > 0; (x, y) in the upper half plane and
                theta on the real line (the universal cover of the fibre)
    sol         (y0, y1, u), group law (y0+e^u y0', y1+e^-u y1', u+u')
    nil4        (a, b, c, e) = heisenberg x R

For every family ``coframe(q)`` returns the matrix F with xi = F(q) qdot the
left-invariant components of a velocity, and ``frame(q)`` its inverse.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import lie_core
from .errors import InvalidForm, StepRejected, Unsupported
from .lie_core import Family, GroupElement, StructureConstants

SERIES_SWITCH = 1e-2


def _ro(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class MagneticSystem:
    family: Family
    structure: StructureConstants
    sigma: np.ndarray
    metric: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        s, g = _ro(self.sigma), _ro(self.metric)
        d = self.structure.dim
        if s.shape != (d, d) or g.shape != (d, d):
            raise ValueError(f"sigma and metric must be {d}x{d}")
        if not np.array_equal(s, -s.T):
            raise ValueError("sigma must be antisymmetric")
        if not np.allclose(g, g.T):
            raise ValueError("metric must be symmetric")
        np.linalg.cholesky(g)
        if lie_core.cocycle_residual(s, self.structure) > 1e-12:
            raise ValueError("sigma is not a closed left-invariant 2-form")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "metric", g)

    @property
    def dim(self) -> int:
        return self.structure.dim

    @property
    def name(self) -> str:
        return self.family.value

    @property
    def J(self) -> np.ndarray:
        if self.family is not Family.TORUS:
            raise Unsupported("J is only defined for tori")
        return self.sigma

    @property
    def identity_metric(self) -> bool:
        return bool(np.array_equal(self.metric, np.eye(self.dim)))

    # constructors -----------------------------------------------------------
    @classmethod
    def torus(cls, J=None, n: int = 2) -> "MagneticSystem":
        if J is None:
            J = np.zeros((n, n))
            J[0, 1], J[1, 0] = 1.0, -1.0
        J = np.asarray(J, dtype=float)
        n = J.shape[0]
        return cls(Family.TORUS, lie_core.abelian_constants(n), J, np.eye(n))

    @classmethod
    def heisenberg(cls) -> "MagneticSystem":
        s = np.zeros((3, 3))
        s[0, 1], s[1, 0] = -1.0, 1.0  # sigma = -dx ^ dy
        return cls(Family.HEISENBERG, lie_core.heisenberg_constants(), s, np.eye(3))

    @classmethod
    def psl2(cls) -> "MagneticSystem":
        s = np.zeros((3, 3))
        s[0, 1], s[1, 0] = 1.0, -1.0  # sigma = d(gamma) = dx ^ dy / y^2
        return cls(Family.PSL2, lie_core.psl2_constants(), s, np.eye(3))

    @classmethod
    def sol(cls) -> "MagneticSystem":
        s = np.zeros((3, 3))
        s[0, 1], s[1, 0] = -1.0, 1.0  # sigma = -dy0 ^ dy1
        return cls(Family.SOL, lie_core.sol_constants(), s, np.eye(3))

    @classmethod
    def nil4(cls) -> "MagneticSystem":
        s = np.zeros((4, 4))
        s[0, 2], s[2, 0] = -1.0, 1.0
        s[1, 3], s[3, 1] = -1.0, 1.0
        return cls(Family.NIL4, lie_core.nil4_constants(), s, np.eye(4))


def make_system(name: str, dim: int = 2) -> MagneticSystem:
    family = Family(name)
    if family is Family.TORUS:
        J = np.zeros((dim, dim))
        J[0, 1], J[1, 0] = 1.0, -1.0
        return MagneticSystem.torus(J)
    return getattr(MagneticSystem, family.value)()


@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _ro(self.q))
        object.__setattr__(self, "p", _ro(self.p))
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("phase state must be finite")

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_z(cls, z) -> "PhaseState":
        z = np.asarray(z, dtype=float)
        d = z.shape[0] // 2
        return cls(z[:d], z[d:])

    def on_shell(self, system: MagneticSystem, k: float, tol: float = 1e-9) -> bool:
        return abs(hamiltonian(self.p, system) - k) < tol


# -- charts -----------------------------------------------------------------

def coframe(q, system: MagneticSystem) -> np.ndarray:
    """F(q) with xi = F(q) qdot; accepts complex input for complex-step use."""
    q = np.asarray(q)
    fam = system.family
    if fam is Family.TORUS:
        return np.eye(system.dim, dtype=q.dtype)
    if fam is Family.HEISENBERG:
        x = q[0]
        return np.array([[1, 0, 0], [0, 1, 0], [0, -x, 1]], dtype=q.dtype)
    if fam is Family.PSL2:
        y, th = q[1], q[2]
        c, s = np.cos(th), np.sin(th)
        return np.array([[c / y, s / y, 0], [-s / y, c / y, 0], [1 / y, 0, 1]], dtype=q.dtype)
    if fam is Family.SOL:
        u = q[2]
        return np.array([[np.exp(-u), 0, 0], [0, np.exp(u), 0], [0, 0, 1]], dtype=q.dtype)
    a = q[0]
    return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, -a, 1, 0], [0, 0, 0, 1]], dtype=q.dtype)


def frame(q, system: MagneticSystem) -> np.ndarray:
    """E(q) = F(q)^-1, so qdot = E(q) xi."""
    q = np.asarray(q)
    fam = system.family
    if fam is Family.TORUS:
        return np.eye(system.dim, dtype=q.dtype)
    if fam is Family.HEISENBERG:
        x = q[0]
        return np.array([[1, 0, 0], [0, 1, 0], [0, x, 1]], dtype=q.dtype)
    if fam is Family.PSL2:
        y, th = q[1], q[2]
        c, s = np.cos(th), np.sin(th)
        return np.array([[y * c, -y * s, 0], [y * s, y * c, 0], [-c, s, 1]], dtype=q.dtype)
    if fam is Family.SOL:
        u = q[2]
        return np.array([[np.exp(u), 0, 0], [0, np.exp(-u), 0], [0, 0, 1]], dtype=q.dtype)
    a = q[0]
    return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, a, 1, 0], [0, 0, 0, 1]], dtype=q.dtype)


def frame_derivative(q, system: MagneticSystem) -> np.ndarray:
    """dE[a, b, c] = d E_ab / d q_c."""
    q = np.asarray(q)
    d = system.dim
    out = np.zeros((d, d, d), dtype=q.dtype)
    fam = system.family
    if fam in (Family.HEISENBERG, Family.NIL4):
        out[2, 1, 0] = 1
    elif fam is Family.PSL2:
        y, th = q[1], q[2]
        c, s = np.cos(th), np.sin(th)
        out[:, :, 1] = [[c, -s, 0], [s, c, 0], [0, 0, 0]]
        out[:, :, 2] = [[-y * s, -y * c, 0], [y * c, -y * s, 0], [s, c, 0]]
    elif fam is Family.SOL:
        u = q[2]
        out[0, 0, 2] = np.exp(u)
        out[1, 1, 2] = -np.exp(-u)
    return out


def coframe_derivative(q, system: MagneticSystem) -> np.ndarray:
    """dF[a, b, c] = d F_ab / d q_c."""
    q = np.asarray(q)
    d = system.dim
    out = np.zeros((d, d, d), dtype=q.dtype)
    fam = system.family
    if fam in (Family.HEISENBERG, Family.NIL4):
        out[2, 1, 0] = -1
    elif fam is Family.PSL2:
        y, th = q[1], q[2]
        c, s = np.cos(th), np.sin(th)
        out[:, :, 1] = [[-c / y**2, -s / y**2, 0], [s / y**2, -c / y**2, 0], [-1 / y**2, 0, 0]]
        out[:, :, 2] = [[-s / y, c / y, 0], [-c / y, -s / y, 0], [0, 0, 0]]
    elif fam is Family.SOL:
        u = q[2]
        out[0, 0, 2] = -np.exp(-u)
        out[1, 1, 2] = np.exp(u)
    return out


def config_primitive(q, system: MagneticSystem) -> np.ndarray:
    """Covector of a fixed 1-form theta on the chart with d theta = sigma."""
    q = np.asarray(q)
    fam = system.family
    if fam is Family.TORUS:
        return -0.5 * (system.sigma @ q)
    if fam is Family.HEISENBERG:
        return np.array([0, -q[0], 1], dtype=q.dtype)
    if fam is Family.PSL2:
        return np.array([1 / q[1], 0, 1], dtype=q.dtype)
    if fam is Family.SOL:
        return 0.5 * np.array([q[1], -q[0], 0], dtype=q.dtype)
    a, c, e = q[0], q[2], q[3]
    return np.array([c, 0.5 * a * a + e, 0, 0], dtype=q.dtype)


def config_primitive_derivative(q, system: MagneticSystem) -> np.ndarray:
    """D[b, c] = d theta_b / d q_c."""
    q = np.asarray(q)
    d = system.dim
    out = np.zeros((d, d), dtype=q.dtype)
    fam = system.family
    if fam is Family.TORUS:
        out[:] = -0.5 * system.sigma
    elif fam is Family.HEISENBERG:
        out[1, 0] = -1
    elif fam is Family.PSL2:
        out[0, 1] = -1 / q[1] ** 2
    elif fam is Family.SOL:
        out[0, 1], out[1, 0] = 0.5, -0.5
    else:
        out[0, 2], out[1, 0], out[1, 3] = 1, q[0], 1
    return out


# -- matrix realisation of configurations -----------------------------------

def _psl2_matrix(x, y, th):
    n = np.array([[1.0, x], [0.0, 1.0]])
    a = np.diag([math.sqrt(y), 1.0 / math.sqrt(y)])
    h = 0.5 * (th - math.pi / 2)
    k = np.array([[math.cos(h), math.sin(h)], [-math.sin(h), math.cos(h)]])
    return n @ a @ k


def chart_to_group(q, system: MagneticSystem) -> GroupElement:
    q = np.asarray(q, dtype=float)
    fam = system.family
    if fam is Family.TORUS:
        m = np.eye(system.dim + 1)
        m[:-1, -1] = q
    elif fam is Family.HEISENBERG:
        x, y, z = q
        m = np.array([[1, x, z], [0, 1, y], [0, 0, 1.0]])
    elif fam is Family.PSL2:
        if q[1] <= 0:
            raise StepRejected("psl2 chart requires y > 0")
        m = _psl2_matrix(*q)
    elif fam is Family.SOL:
        y0, y1, u = q
        m = np.array([[math.exp(u), 0, y0], [0, math.exp(-u), y1], [0, 0, 1.0]])
    else:
        a, b, c, e = q
        m = np.eye(5)
        m[0, 1], m[1, 2], m[0, 2], m[3, 4] = a, b, c, e
    return GroupElement(fam, m)


def group_to_chart(g: GroupElement, system: MagneticSystem, theta_ref: float | None = None) -> np.ndarray:
    """Inverse of chart_to_group.  For psl2 the fibre angle is lifted to the
    branch closest to ``theta_ref``."""
    m = np.asarray(g.matrix)
    fam = system.family
    if fam is Family.TORUS:
        return m[:-1, -1].copy()
    if fam is Family.HEISENBERG:
        return np.array([m[0, 1], m[1, 2], m[0, 2]])
    if fam is Family.SOL:
        return np.array([m[0, 2], m[1, 2], math.log(m[0, 0])])
    if fam is Family.NIL4:
        return np.array([m[0, 1], m[1, 2], m[0, 2], m[3, 4]])
    a, b, c, d = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    den = c * c + d * d
    y = 1.0 / den
    x = (a * c + b * d) / den
    k = np.diag([1 / math.sqrt(y), math.sqrt(y)]) @ np.array([[1.0, -x], [0.0, 1.0]]) @ m
    th = 2.0 * math.atan2(k[0, 1], k[0, 0]) + math.pi / 2
    th = math.remainder(th, 2 * math.pi)
    if theta_ref is not None:
        th += 2 * math.pi * round((theta_ref - th) / (2 * math.pi))
    return np.array([x, y, th])


# -- Hamiltonian data ---------------------------------------------------------

def _momenta(p):
    return p.p if isinstance(p, PhaseState) else np.asarray(p)


def hamiltonian(p, system: MagneticSystem) -> float:
    p = _momenta(p)
    return 0.5 * p @ system.metric @ p


def casimir(p, system: MagneticSystem) -> float | None:
    """A Casimir of the twisted Lie-Poisson structure, or None if there is none."""
    p = _momenta(p)
    fam = system.family
    if fam in (Family.HEISENBERG, Family.PSL2):
        return float(p[2])
    if fam is Family.SOL:
        return float(p[2] + p[0] * p[1])
    if fam is Family.TORUS:
        k = kernel_projector(system)
        return float(p @ k @ p)
    return None


def casimir_gradient(p, system: MagneticSystem) -> np.ndarray | None:
    p = _momenta(p)
    fam = system.family
    if fam in (Family.HEISENBERG, Family.PSL2):
        return np.array([0.0, 0.0, 1.0])
    if fam is Family.SOL:
        return np.array([p[1], p[0], 1.0])
    if fam is Family.TORUS:
        return 2.0 * kernel_projector(system) @ p
    return None


def kernel_projector(system: MagneticSystem) -> np.ndarray:
    """Orthogonal projector onto Ker J, with rank cut at 1e-10 * |J|."""
    J = system.J
    u, s, vt = np.linalg.svd(J)
    tol = 1e-10 * max(np.linalg.norm(J, 2), 1e-300)
    null = vt[s <= tol]
    return null.T @ null


def image_inverse(system: MagneticSystem) -> np.ndarray:
    """A = (J restricted to Im J)^-1, extended by zero on Ker J."""
    J = system.J
    tol = 1e-10 * max(np.linalg.norm(J, 2), 1e-300)
    return np.linalg.pinv(J, rcond=tol / max(np.linalg.norm(J, 2), 1e-300))


def vector_field(s: PhaseState, system: MagneticSystem) -> tuple[np.ndarray, np.ndarray]:
    """X_H at s: (chart velocity, momentum velocity)."""
    xi = system.metric @ s.p
    return frame(s.q, system) @ xi, lie_core.euler_field(s.p, system)


def rhs(z, system: MagneticSystem) -> np.ndarray:
    d = system.dim
    q, p = z[:d], z[d:]
    xi = system.metric @ p
    return np.concatenate([frame(q, system) @ xi, lie_core.euler_field(p, system)])


def jacobian(z, system: MagneticSystem) -> np.ndarray:
    """Exact derivative of ``rhs`` with respect to z = (q, p)."""
    d = system.dim
    q, p = np.asarray(z[:d]), np.asarray(z[d:])
    xi = system.metric @ p
    out = np.zeros((2 * d, 2 * d))
    out[:d, :d] = np.einsum("abc,b->ac", frame_derivative(q, system), xi)
    out[:d, d:] = frame(q, system) @ system.metric
    out[d:, d:] = lie_core.euler_jacobian(p, system)
    return out


def symplectic_matrix(z, system: MagneticSystem) -> np.ndarray:
    """Matrix W of omega = d(liouville) + pullback of sigma in chart coordinates.

    omega(u, v) = u^T W v, and Hamilton's equations read W X_H = grad H.
    """
    d = system.dim
    q, p = z[:d], z[d:]
    F = coframe(q, system)
    inner = -np.einsum("i,ijk->jk", p, np.moveaxis(system.structure.c, 2, 0)) + system.sigma
    W = np.zeros((2 * d, 2 * d))
    W[:d, :d] = F.T @ inner @ F
    W[:d, d:] = -F.T
    W[d:, :d] = F
    return W


def grad_hamiltonian(z, system: MagneticSystem) -> np.ndarray:
    d = system.dim
    return np.concatenate([np.zeros(d), system.metric @ np.asarray(z[d:])])


# -- fast scalar right-hand sides for long integrations --------------------

def scalar_rhs(system: MagneticSystem):
    """A plain-float right-hand side f(list) -> list for the RK4 inner loop."""
    fam = system.family
    if not system.identity_metric:
        return lambda z: list(rhs(np.asarray(z), system))
    if fam is Family.HEISENBERG:
        def f(z):
            x, y, zz, a, b, c = z
            return [a, b, x * b + c, -b * c - b, a * c + a, 0.0]
    elif fam is Family.PSL2:
        cos, sin = math.cos, math.sin

        def f(z):
            x, y, th, a, b, c = z
            ct, st = cos(th), sin(th)
            u = a * ct - b * st
            return [y * u, y * (a * st + b * ct), c - u, 2 * b * c + b, -2 * a * c - a, 0.0]
    elif fam is Family.SOL:
        exp = math.exp

        def f(z):
            y0, y1, u, a0, a1, nu = z
            return [exp(u) * a0, exp(-u) * a1, nu, -a1 + nu * a0, a0 - nu * a1, a1 * a1 - a0 * a0]
    elif fam is Family.NIL4:
        def f(z):
            a, b, c, e, x1, x2, x3, x4 = z
            return [x1, x2, a * x2 + x3, x4, -x2 * x3 - x3, x1 * x3 - x4, x1, x2]
    else:
        n = system.dim
        J = [list(map(float, row)) for row in system.sigma]
        rng = range(n)

        def f(z):
            p = z[n:]
            return list(p) + [sum(J[i][j] * p[j] for j in rng) for i in rng]
    return f


# -- closed-form flows ------------------------------------------------------

def _g1(phi):
    # (phi - sin(2 phi)/2) / (2 phi^2)
    if abs(phi) < SERIES_SWITCH:
        p2 = phi * phi
        return phi * (1 / 3 - p2 * (1 / 15 - p2 * (2 / 315 - p2 / 2835)))
    return (phi - 0.5 * math.sin(2 * phi)) / (2 * phi * phi)


def _g2(phi):
    # (phi + sin(2 phi)/2 - 2 sin(phi)) / (2 phi^2)
    if abs(phi) < SERIES_SWITCH:
        p2 = phi * phi
        return phi * (-1 / 6 + p2 * (7 / 120 - p2 * 31 / 5040))
    return (phi + 0.5 * math.sin(2 * phi) - 2 * math.sin(phi)) / (2 * phi * phi)


def _rotate(u, v, phi):
    c, s = math.cos(phi), math.sin(phi)
    return u * c - v * s, v * c + u * s


def _heisenberg_flow(s: PhaseState, t: float) -> PhaseState:
    x0, y0, z0 = s.q
    u, v, c = s.p
    mu = 1.0 + c
    phi = mu * t
    sinc = np.sinc(phi / (2 * math.pi))
    S = t * float(np.sinc(phi / math.pi))
    K = t * 0.5 * phi * float(sinc) ** 2
    x = x0 + u * S - v * K
    y = y0 + v * S + u * K
    integral = (
        u * v * t * t * 0.5 * float(sinc) ** 2 * math.cos(phi)
        + u * u * t * t * _g1(phi)
        + v * v * t * t * _g2(phi)
    )
    z = z0 + c * t + x0 * (y - y0) + integral
    pa, pb = _rotate(u, v, phi)
    return PhaseState([x, y, z], [pa, pb, c])


def psl2_flow_matrix(g0: np.ndarray, p0, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form psl2 flow in the SL(2) realisation.

    With p0 = (A cos f, A sin f, C), mu = -1 - 2C and d = A X - (1 + C) V the
    solution is g(t) = g0 K e^{td} Q(t)^-1 K^-1 with K = e^{fV}, Q(t) = e^{t mu V}.
    """
    pa, pb, C = (float(v) for v in p0)
    A = math.hypot(pa, pb)
    f = math.atan2(pb, pa)
    mu = -1.0 - 2.0 * C
    V = lie_core.algebra_basis(Family.PSL2)[2]
    K = lie_core.expm_sl2(f * V)
    d = lie_core.algebra_matrix([A, 0.0, -1.0 - C], Family.PSL2)
    Qinv = lie_core.expm_sl2(-mu * t * V)
    g = g0 @ K @ lie_core.expm_sl2(t * d) @ Qinv @ np.linalg.inv(K)
    a, b = _rotate(pa, pb, mu * t)
    return g, np.array([a, b, C])


def _psl2_flow(s: PhaseState, t: float, system: MagneticSystem) -> PhaseState:
    g0 = chart_to_group(s.q, system).matrix
    pa, pb, C = s.p
    speed = abs(C) + math.hypot(pa, pb) + 1e-12
    n = max(1, math.ceil(abs(t) * speed / 0.5))
    th = float(s.q[2])
    g, p = g0, s.p
    for i in range(1, n + 1):
        g, p = psl2_flow_matrix(g0, s.p, t * i / n)
        th = group_to_chart(GroupElement(Family.PSL2, g), system, theta_ref=th)[2]
    q = group_to_chart(GroupElement(Family.PSL2, g), system, theta_ref=th)
    return PhaseState(q, p)


def torus_flow_map(t: float, system: MagneticSystem) -> np.ndarray:
    """Linear flow map of the torus system, z(t) = M(t) z(0)."""
    n = system.dim
    gen = np.zeros((2 * n, 2 * n))
    gen[:n, n:] = system.metric
    gen[n:, n:] = system.sigma @ system.metric
    return expm(t * gen)


def closed_form_flow(s: PhaseState, t: float, system: MagneticSystem) -> PhaseState:
    fam = system.family
    if t == 0:
        return s
    if fam is Family.TORUS:
        return PhaseState.from_z(torus_flow_map(t, system) @ s.z)
    if not system.identity_metric:
        raise Unsupported("closed-form flows assume the standard left-invariant metric")
    if fam is Family.HEISENBERG:
        return _heisenberg_flow(s, t)
    if fam is Family.PSL2:
        return _psl2_flow(s, t, system)
    raise Unsupported(f"no closed-form flow for {fam.value}; integrate numerically")


# -- one-forms on phase space -------------------------------------------------

class OneFormId(str, enum.Enum):
    PSI = "psi"
    GAMMA = "gamma"
    LIOUVILLE = "liouville"
    PRIMITIVE = "primitive"
    PHI_HEIS = "phi_heis"
    PHI_PSL2 = "phi_psl2"
    LAMBDA_TORUS = "lambda_torus"
    DELTA_PSL2 = "delta_psl2"
    LIOUVILLE_DELTA = "liouville_delta"
    LAMBDA_SOL = "lambda_sol"
    BETA_TORUS = "beta_torus"


_FORM_FAMILIES = {
    OneFormId.PSI: {Family.HEISENBERG, Family.PSL2},
    OneFormId.GAMMA: {Family.HEISENBERG, Family.PSL2},
    OneFormId.LIOUVILLE: set(Family),
    OneFormId.PRIMITIVE: set(Family),
    OneFormId.PHI_HEIS: {Family.HEISENBERG},
    OneFormId.PHI_PSL2: {Family.PSL2},
    OneFormId.LAMBDA_TORUS: {Family.TORUS},
    OneFormId.DELTA_PSL2: {Family.PSL2},
    OneFormId.LIOUVILLE_DELTA: {Family.PSL2},
    OneFormId.LAMBDA_SOL: {Family.SOL},
    OneFormId.BETA_TORUS: {Family.TORUS},
}

CONFIG_FORMS = {OneFormId.GAMMA, OneFormId.DELTA_PSL2, OneFormId.BETA_TORUS}


def check_form(form, system: MagneticSystem) -> OneFormId:
    try:
        form = OneFormId(form)
    except ValueError:
        raise InvalidForm(f"unknown one-form {form!r}") from None
    if system.family not in _FORM_FAMILIES[form]:
        raise InvalidForm(f"{form.value} is not defined on {system.family.value}")
    return form


def config_form(form, q, system: MagneticSystem) -> np.ndarray:
    """Covector on the configuration chart for the forms living there."""
    form = check_form(form, system)
    q = np.asarray(q)
    if form is OneFormId.GAMMA or form is OneFormId.BETA_TORUS:
        return config_primitive(q, system)
    if form is OneFormId.DELTA_PSL2:
        return np.array([1 / q[1], 0, 0.5], dtype=q.dtype)
    raise InvalidForm(f"{form.value} is not a configuration-space form")


def form_covector(form, z, system: MagneticSystem) -> np.ndarray:
    """Components of a phase-space 1-form in chart coordinates (q, p)."""
    form = check_form(form, system)
    z = np.asarray(z)
    d = system.dim
    q, p = z[:d], z[d:]
    zero = np.zeros(d, dtype=z.dtype)
    if form in CONFIG_FORMS:
        return np.concatenate([config_form(form, q, system), zero])
    if form is OneFormId.LIOUVILLE:
        return np.concatenate([coframe(q, system).T @ p, zero])
    if form is OneFormId.PSI or form is OneFormId.PRIMITIVE:
        return np.concatenate([coframe(q, system).T @ p + config_primitive(q, system), zero])
    if form is OneFormId.LIOUVILLE_DELTA:
        return np.concatenate([coframe(q, system).T @ p + config_form(OneFormId.DELTA_PSL2, q, system), zero])
    if form is OneFormId.PHI_HEIS:
        r2 = p[0] ** 2 + p[1] ** 2
        return np.concatenate([zero, np.array([-p[1], p[0], 0], dtype=z.dtype) / r2])
    if form is OneFormId.PHI_PSL2:
        r2 = p[0] ** 2 + p[1] ** 2
        return np.concatenate([zero, np.array([p[1], -p[0], 0], dtype=z.dtype) / r2])
    if form is OneFormId.LAMBDA_SOL:
        f = p[2] + p[0] * p[1]
        return np.concatenate([np.array([0, 0, f], dtype=z.dtype), 0.5 * np.array([-p[1], p[0], 0], dtype=z.dtype)])
    # lambda_torus
    P1 = kernel_projector(system)
    A = image_inverse(system)
    return np.concatenate([P1 @ p, -0.5 * (A @ p)])


def form_differential(form, z, system: MagneticSystem) -> np.ndarray:
    """Matrix M of d(form) at z, M[a, b] = d(form)(e_a, e_b), by complex step."""
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    h = 1e-30
    K = np.empty((n, n))
    for a in range(n):
        zc = z.astype(complex)
        zc[a] += 1j * h
        K[:, a] = form_covector(form, zc, system).imag / h
    return K.T - K


def form_pairing(form, s: PhaseState, system: MagneticSystem) -> float:
    """Value of the 1-form on X_H at s."""
    return float(form_covector(form, s.z, system) @ rhs(s.z, system))


# -- Lagrangian action ------------------------------------------------------

@dataclass(frozen=True)
class CurveSamples:
    """A closed curve on the configuration chart.

    ``times`` has N+1 strictly increasing entries, the last one being the
    period; ``points[N]`` must coincide with ``points[0]``.
    """

    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        t = _ro(self.times)
        x = _ro(self.points)
        if t.ndim != 1 or x.shape[0] != t.shape[0]:
            raise ValueError("times and points must have matching lengths")
        if t.shape[0] - 1 < 8:
            raise ValueError("a curve needs at least 8 nodes")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        scale = max(1.0, float(np.max(np.abs(x))))
        if np.max(np.abs(x[-1] - x[0])) > 1e-9 * scale:
            raise ValueError("curve is not closed")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", x)
        if self.velocities is not None:
            object.__setattr__(self, "velocities", _ro(self.velocities))

    @property
    def n(self) -> int:
        return self.times.shape[0] - 1


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    error: float

    def __float__(self):
        return self.value


def _periodic_velocity(t, x):
    """Second-order central differences on a closed, possibly non-uniform grid."""
    n = t.shape[0] - 1
    T = t[-1] - t[0]
    tt = np.concatenate([[t[n - 1] - T], t[:n], [t[n]]])
    xx = np.concatenate([x[n - 1:n], x[:n], x[n:n + 1]])
    h0 = tt[1:-1] - tt[:-2]
    h1 = tt[2:] - tt[1:-1]
    d0 = (xx[1:-1] - xx[:-2]) / h0[:, None]
    d1 = (xx[2:] - xx[1:-1]) / h1[:, None]
    v = (h1[:, None] * d0 + h0[:, None] * d1) / (h0 + h1)[:, None]
    return np.concatenate([v, v[:1]])


def _action_integrand(times, points, k, theta, system, velocities):
    vals = np.empty(times.shape[0])
    ginv = np.linalg.inv(system.metric)
    for i, (q, v) in enumerate(zip(points, velocities)):
        xi = coframe(q, system) @ v
        val = 0.5 * xi @ ginv @ xi + k
        if theta is not None:
            val += config_form(theta, q, system) @ v
        vals[i] = val
    return vals


def lagrangian_action(curve: CurveSamples, k: float, theta, system: MagneticSystem) -> QuadratureResult:
    """A_{L+k} = int (|qdot|^2 / 2 + theta(qdot) + k) dt, potential U = 0."""
    if curve.times[-1] - curve.times[0] <= 0:
        raise ValueError("degenerate time interval")
    if theta is not None:
        theta = check_form(theta, system)
    t, x = curve.times, curve.points
    if curve.velocities is not None:
        vel, vel2 = curve.velocities, curve.velocities[::2]
    else:
        vel, vel2 = _periodic_velocity(t, x), _periodic_velocity(t[::2], x[::2])
    full = float(np.trapezoid(_action_integrand(t, x, k, theta, system, vel), t))
    if curve.n % 2:
        return QuadratureResult(full, float("nan"))
    coarse = float(np.trapezoid(_action_integrand(t[::2], x[::2], k, theta, system, vel2), t[::2]))
    return QuadratureResult(full, abs(full - coarse) / 3.0)


def circle_curve_torus(R: float, speed: float, n: int = 256, clockwise: bool = True, center=(0.0, 0.0)) -> CurveSamples:
    """Round circle of radius R in the (q1, q2)-plane traversed at constant speed."""
    T = 2 * math.pi * R / speed
    t = np.linspace(0.0, T, n + 1)
    w = (-1.0 if clockwise else 1.0) * speed / R
    ang = w * t
    pts = np.stack([center[0] + R * np.cos(ang), center[1] + R * np.sin(ang)], axis=1)
    vel = np.stack([-R * w * np.sin(ang), R * w * np.cos(ang)], axis=1)
    pts[-1] = pts[0]
    return CurveSamples(t, pts, vel)


def geodesic_circle_psl2(k: float, r: float, n: int = 512, theta0: float = 0.0) -> CurveSamples:
    """The curve B_r: a hyperbolic circle of radius r at speed sqrt(2k),
    clockwise, with x scaled by 1/sqrt(2) and constant fibre angle."""
    speed = math.sqrt(2 * k)
    T = 2 * math.pi * math.sinh(r) / speed
    t = np.linspace(0.0, T, n + 1)
    om = speed / math.sinh(r)
    w = math.tanh(r / 2) * np.exp(-1j * om * t)
    z = 1j * (1 + w) / (1 - w)
    dw = -1j * om * w
    dz = 2j * dw / (1 - w) ** 2
    pts = np.stack([z.real / math.sqrt(2), z.imag, np.full_like(t, theta0)], axis=1)
    vel = np.stack([dz.real / math.sqrt(2), dz.imag, np.zeros_like(t)], axis=1)
    pts[-1] = pts[0]
    return CurveSamples(t, pts, vel)
