"""Numerical flows: fixed-step RK4 with step-doubling checks, variational
flows and invariant-drift reports."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import lie_core, systems
from .errors import StepRejected
from .lie_core import Family
from .systems import MagneticSystem, PhaseState

MAX_HALVINGS = 12
PSL2_PROJECT_EVERY = 100
PROJECT_COND_MAX = 1e6


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray = field(repr=False)
    method: str
    dt: float
    refined_steps: int = 0

    def __post_init__(self):
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return self.times.shape[0]

    def state(self, i: int) -> PhaseState:
        return PhaseState.from_z(self.states[i])

    @property
    def final(self) -> PhaseState:
        return self.state(-1)

    def to_csv(self, system: MagneticSystem) -> str:
        d = system.dim
        buf = io.StringIO()
        cols = ["t"] + [f"q{i + 1}" for i in range(d)] + [f"p{i + 1}" for i in range(d)] + ["H", "casimir"]
        buf.write(",".join(cols) + "\n")
        for t, z in zip(self.times, self.states):
            c = systems.casimir(z[d:], system)
            row = [t, *z, systems.hamiltonian(z[d:], system), "" if c is None else c]
            buf.write(",".join(x if isinstance(x, str) else repr(float(x)) for x in row) + "\n")
        return buf.getvalue()


def _rk4(f, z, h):
    k1 = f(z)
    k2 = f([a + 0.5 * h * b for a, b in zip(z, k1)])
    k3 = f([a + 0.5 * h * b for a, b in zip(z, k2)])
    k4 = f([a + h * b for a, b in zip(z, k3)])
    h6 = h / 6.0
    return [a + h6 * (b + 2.0 * c + 2.0 * d + e) for a, b, c, d, e in zip(z, k1, k2, k3, k4)]


def _admissible(z, family):
    if not all(math.isfinite(v) for v in z):
        return False
    return not (family is Family.PSL2 and z[1] <= 0.0)


def _substeps(f, z, h, m):
    for _ in range(m):
        z = _rk4(f, z, h / m)
    return z


def integrate(s: PhaseState, t_max: float, dt: float, system: MagneticSystem,
              tol: float = 1e-11, check_every: int = 16, record_every: int = 1) -> Trajectory:
    """Classical RK4 at step ``dt``.

    Every ``check_every`` steps the step is compared with two half steps; if
    the local error estimate exceeds ``tol`` (relative to the state size) the
    step is re-done with successively halved substeps.  Steps that leave the
    chart or produce non-finite values are halved as well and abort the run
    after MAX_HALVINGS failures.
    """
    if t_max < 0:
        raise ValueError("t_max must be non-negative")
    if t_max == 0:
        return Trajectory(np.array([0.0]), s.z[None, :].copy(), "rk4", float(dt))
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = max(1, int(math.ceil(t_max / dt - 1e-9)))
    h = t_max / n
    f = systems.scalar_rhs(system)
    fam = system.family
    z = [float(v) for v in s.z]
    times, states = [0.0], [list(z)]
    refined = 0
    for i in range(1, n + 1):
        if i % check_every == 0:
            full = _rk4(f, z, h)
            m, new = 2, _substeps(f, z, h, 2)
            scale = max(1.0, max(abs(v) for v in z))
            while (not _admissible(full, fam) or not _admissible(new, fam)
                   or max(abs(a - b) for a, b in zip(full, new)) / 15.0 > tol * scale):
                if m >= 2 ** MAX_HALVINGS:
                    raise StepRejected(f"step at t={i * h:.6g} failed error control")
                full, m = new, 2 * m
                new = _substeps(f, z, h, m)
            refined += m > 2
        else:
            new = _rk4(f, z, h)
            m = 1
            while not _admissible(new, fam):
                m *= 2
                if m > 2 ** MAX_HALVINGS:
                    raise StepRejected(f"non-finite or out-of-chart state at t={i * h:.6g}")
                new = _substeps(f, z, h, m)
        z = new
        if i % record_every == 0 or i == n:
            times.append(i * h)
            states.append(list(z))
    return Trajectory(np.array(times), np.array(states), "rk4", h, refined)


# -- variational flows -----------------------------------------------------------

@dataclass(frozen=True)
class TangentFrame:
    basepoint: PhaseState
    matrix: np.ndarray
    t: float


def tangent_flow(s: PhaseState, t_max: float, dt: float, system: MagneticSystem, frame0=None) -> TangentFrame:
    """Solve d/dt Phi = DX_H(phi_t) Phi in chart coordinates by RK4."""
    d2 = 2 * system.dim
    phi = np.eye(d2) if frame0 is None else np.array(frame0, dtype=float)
    if t_max == 0:
        return TangentFrame(s, phi, 0.0)
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = max(1, int(math.ceil(t_max / dt - 1e-9)))
    h = t_max / n
    z = s.z.copy()

    def f(z, phi):
        return systems.rhs(z, system), systems.jacobian(z, system) @ phi

    for _ in range(n):
        a1, b1 = f(z, phi)
        a2, b2 = f(z + 0.5 * h * a1, phi + 0.5 * h * b1)
        a3, b3 = f(z + 0.5 * h * a2, phi + 0.5 * h * b2)
        a4, b4 = f(z + h * a3, phi + h * b3)
        z = z + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        phi = phi + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(phi))):
            raise StepRejected("variational flow produced non-finite values")
    return TangentFrame(PhaseState.from_z(z), phi, t_max)


@dataclass(frozen=True)
class GrowthHistory:
    """Accumulated log-growth of a re-orthonormalised tangent frame."""

    times: np.ndarray
    log_growth: np.ndarray  # (samples, columns), cumulative sums of log |R_ii|
    projection_residual: float


def level_set_directions(p, system: MagneticSystem) -> np.ndarray:
    """Orthonormal basis of momentum directions tangent to the joint level set
    of the Hamiltonian and the Casimir."""
    grads = [system.metric @ p]
    cg = systems.casimir_gradient(p, system)
    if cg is not None:
        grads.append(cg)
    g = np.array(grads).T
    u, sv, _ = np.linalg.svd(g, full_matrices=True)
    rank = int(np.sum(sv > 1e-12 * max(sv.max(), 1e-300)))
    return u[:, rank:]


def matrix_variational_flow(s: PhaseState, t_max: float, dt: float, system: MagneticSystem,
                            frame0: tuple[np.ndarray, np.ndarray], renorm_every: int = 10) -> GrowthHistory:
    """Linearised flow with the configuration in its matrix realisation.

    The configuration is g in a matrix group with g' = g B(dH), momenta follow
    the Euler field.  ``frame0`` = (dG, dP) with shapes (m, r, r) and (m, d)
    gives m initial tangent vectors.  The frame is QR re-orthonormalised every
    ``renorm_every`` steps and the log of the diagonal of R is accumulated.
    """
    basis = lie_core.algebra_basis(system.family, system.dim)
    G = system.metric
    g = systems.chart_to_group(s.q, system).matrix.copy()
    p = s.p.copy()
    dG, dP = (np.array(a, dtype=float) for a in frame0)
    m, r = dG.shape[0], g.shape[0]
    n = max(1, int(math.ceil(t_max / dt - 1e-9)))
    h = t_max / n
    B = lambda xi: np.tensordot(xi, basis, axes=(-1, 0))  # noqa: E731

    def f(g, p, dG, dP):
        a = B(G @ p)
        gd = g @ a
        pd = lie_core.euler_field(p, system)
        dGd = dG @ a + g @ B(dP @ G.T)
        dPd = dP @ lie_core.euler_jacobian(p, system).T
        return gd, pd, dGd, dPd

    def pack(dG, dP):
        return np.concatenate([dG.reshape(m, -1), dP], axis=1).T

    def unpack(M):
        M = M.T
        return M[:, : r * r].reshape(m, r, r), M[:, r * r:]

    q0, r0 = np.linalg.qr(pack(dG, dP))
    dG, dP = unpack(q0)
    logs = np.zeros(m)
    times, hist = [0.0], [logs.copy()]
    proj_res = 0.0
    for i in range(1, n + 1):
        k1 = f(g, p, dG, dP)
        k2 = f(*(x + 0.5 * h * y for x, y in zip((g, p, dG, dP), k1)))
        k3 = f(*(x + 0.5 * h * y for x, y in zip((g, p, dG, dP), k2)))
        k4 = f(*(x + h * y for x, y in zip((g, p, dG, dP), k3)))
        g, p, dG, dP = (x + h / 6 * (a + 2 * b + 2 * c + e)
                        for x, a, b, c, e in zip((g, p, dG, dP), k1, k2, k3, k4))
        if system.family is Family.PSL2 and i % PSL2_PROJECT_EVERY == 0 and np.linalg.cond(g) < PROJECT_COND_MAX:
            # past this conditioning det(g) is dominated by cancellation
            det = float(np.linalg.det(g))
            proj_res = max(proj_res, abs(det - 1.0))
            g = g / math.sqrt(det)
        if i % renorm_every == 0 or i == n:
            Q, R = np.linalg.qr(pack(dG, dP))
            sgn = np.sign(np.diag(R))
            sgn[sgn == 0] = 1.0
            logs = logs + np.log(np.abs(np.diag(R)))
            dG, dP = unpack(Q * sgn)
            times.append(i * h)
            hist.append(logs.copy())
        if not np.all(np.isfinite(g)):
            raise StepRejected("matrix flow produced non-finite values")
    return GrowthHistory(np.array(times), np.array(hist), proj_res)


# -- invariants -----------------------------------------------------------------

@dataclass(frozen=True)
class InvariantReport:
    energy_drift: float
    casimir_drift: float | None
    energy_drift_rel: float
    casimir_drift_rel: float | None
    min_form_pairings: dict

    def as_dict(self):
        return {
            "energy_drift": self.energy_drift,
            "casimir_drift": self.casimir_drift,
            "energy_drift_rel": self.energy_drift_rel,
            "casimir_drift_rel": self.casimir_drift_rel,
            "min_form_pairings": dict(self.min_form_pairings),
        }


def _rel(drift, ref):
    return drift / abs(ref) if abs(ref) > 1e-3 else drift


def invariant_report(traj: Trajectory, system: MagneticSystem, forms=(), pairing=None) -> InvariantReport:
    """Max |H - H0|, max |Casimir - Casimir0| and the minimum over samples of
    the requested form pairings.  ``pairing`` optionally maps a name to a
    callable state -> float for forms outside the registry."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    d = system.dim
    P = traj.states[:, d:]
    H = 0.5 * np.einsum("ni,ij,nj->n", P, system.metric, P)
    e = float(np.max(np.abs(H - H[0])))
    c0 = systems.casimir(P[0], system)
    if c0 is None:
        cd = cdr = None
    else:
        C = np.array([systems.casimir(row, system) for row in P])
        cd = float(np.max(np.abs(C - c0)))
        cdr = _rel(cd, c0)
    mins = {}
    for form in forms:
        vals = [systems.form_pairing(form, traj.state(i), system) for i in range(len(traj))]
        mins[systems.OneFormId(form).value] = float(np.min(vals))
    for name, fn in (pairing or {}).items():
        mins[name] = float(min(fn(traj.state(i)) for i in range(len(traj))))
    return InvariantReport(e, cd, _rel(e, H[0]), cdr, mins)
