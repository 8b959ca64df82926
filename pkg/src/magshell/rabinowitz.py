"""Discretised Rabinowitz action functional.

A loop is N nodes z_i = (q_i, p_i) at t_i = i/N on the universal-cover chart
together with a multiplier eta.  With spectral differentiation D and
w(q, p) = F(q)^T p + theta(q) the discrete action is

    A = (1/N) sum_i w_i . (D q)_i  -  (eta/N) sum_i (H(p_i) - k).

Critical points satisfy z' = eta X_H(z) and H = k, so eta is the signed
period of a closed orbit and A is its omega-energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, systems
from .errors import EscapedShell, NoConvergence, PreconditionFailed
from .integrate import Trajectory
from .lie_core import Family
from .systems import MagneticSystem, PhaseState

MIN_NODES = 16
RCOND = 1e-6  # relative cut-off separating the symmetry directions of the critical set


def spectral_matrix(n: int) -> np.ndarray:
    """Dense derivative matrix on n equispaced nodes of [0, 1), Nyquist mode dropped."""
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    sym = 2j * np.pi * k
    return np.real(np.fft.ifft(sym[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0))


_D_CACHE: dict[int, np.ndarray] = {}


def _dmat(n: int) -> np.ndarray:
    if n not in _D_CACHE:
        _D_CACHE[n] = spectral_matrix(n)
    return _D_CACHE[n]


@dataclass(frozen=True)
class DiscreteLoop:
    q: np.ndarray
    p: np.ndarray
    eta: float
    k: float

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        p = np.array(self.p, dtype=float)
        if q.ndim != 2 or q.shape != p.shape:
            raise ValueError("q and p must be (N, d) arrays of the same shape")
        if q.shape[0] < MIN_NODES:
            raise ValueError(f"need at least {MIN_NODES} nodes")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and math.isfinite(self.eta)):
            raise ValueError("loop has non-finite entries")
        q.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "eta", float(self.eta))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def dim(self) -> int:
        return self.q.shape[1]

    def pack(self) -> np.ndarray:
        return np.concatenate([self.q.ravel(), self.p.ravel(), [self.eta]])

    @classmethod
    def unpack(cls, x, n: int, d: int, k: float) -> "DiscreteLoop":
        nd = n * d
        return cls(x[:nd].reshape(n, d), x[nd:2 * nd].reshape(n, d), x[-1], k)

    @classmethod
    def constant(cls, q, p, n: int, k: float, eta: float = 0.0) -> "DiscreteLoop":
        return cls(np.tile(q, (n, 1)), np.tile(p, (n, 1)), eta, k)


def _check(system: MagneticSystem, loop: DiscreteLoop) -> None:
    if loop.dim != system.dim:
        raise ValueError("loop and system dimensions differ")
    if system.family is Family.PSL2 and np.any(loop.q[:, 1] <= 0):
        raise PreconditionFailed("PSL(2,R) loops must stay in y > 0")


def _w(q, p, system):
    return systems.coframe(q, system).T @ p + systems.config_primitive(q, system)


def _w_dq(q, p, system):
    """A[a, b] = d w_a / d q_b."""
    dF = systems.coframe_derivative(q, system)
    return np.einsum("cab,c->ab", dF, p) + systems.config_primitive_derivative(q, system)


def action(loop: DiscreteLoop, system: MagneticSystem) -> float:
    _check(system, loop)
    D = _dmat(loop.n)
    Dq = D @ loop.q
    W = np.array([_w(q, p, system) for q, p in zip(loop.q, loop.p)])
    Hbar = 0.5 * np.einsum("ni,ij,nj->n", loop.p, system.metric, loop.p) - loop.k
    return float(np.sum(W * Dq) / loop.n - loop.eta * np.mean(Hbar))


@dataclass(frozen=True)
class LoopGradient:
    q: np.ndarray
    p: np.ndarray
    eta: float

    def pack(self) -> np.ndarray:
        return np.concatenate([self.q.ravel(), self.p.ravel(), [self.eta]])

    def norm(self) -> float:
        return float(np.linalg.norm(self.pack()))


def gradient(loop: DiscreteLoop, system: MagneticSystem) -> LoopGradient:
    """Exact gradient of the discrete action in the plain l2 metric."""
    _check(system, loop)
    n, G = loop.n, system.metric
    D = _dmat(n)
    Dq = D @ loop.q
    W = np.empty_like(loop.q)
    gq = np.empty_like(loop.q)
    gp = np.empty_like(loop.p)
    for i, (q, p) in enumerate(zip(loop.q, loop.p)):
        W[i] = _w(q, p, system)
        gq[i] = _w_dq(q, p, system).T @ Dq[i]
        gp[i] = systems.coframe(q, system) @ Dq[i]
    gq -= D @ W
    gp -= loop.eta * loop.p @ G.T
    Hbar = 0.5 * np.einsum("ni,ij,nj->n", loop.p, G, loop.p) - loop.k
    return LoopGradient(gq / n, gp / n, float(-np.mean(Hbar)))


def _jacobian(loop: DiscreteLoop, system: MagneticSystem) -> np.ndarray:
    """Derivative of the packed gradient with respect to the packed loop."""
    n, d, G = loop.n, loop.dim, system.metric
    D = _dmat(n)
    Dq = D @ loop.q
    nd = n * d
    Jm = np.zeros((2 * nd + 1, 2 * nd + 1))
    h = 1e-30
    Dk = np.kron(D, np.eye(d))  # (D q) as a linear map on the packed q block
    blocksA = np.zeros((nd, nd))
    blocksF = np.zeros((nd, nd))
    blocksB = np.zeros((nd, nd))
    for i, (q, p) in enumerate(zip(loop.q, loop.p)):
        sl = slice(i * d, (i + 1) * d)
        A = _w_dq(q, p, system)
        F = systems.coframe(q, system)
        blocksA[sl, sl] = A
        blocksF[sl, sl] = F
        blocksB[sl, sl] = F.T
        # local second-order terms by complex step on the first derivatives
        Lqq = np.empty((d, d))
        Lqp = np.empty((d, d))
        Lpq = np.empty((d, d))
        for b in range(d):
            qc = q.astype(complex)
            qc[b] += 1j * h
            Lqq[:, b] = (_w_dq(qc, p.astype(complex), system).T @ Dq[i]).imag / h
            Lpq[:, b] = (systems.coframe(qc, system) @ Dq[i]).imag / h
            pc = p.astype(complex)
            pc[b] += 1j * h
            Lqp[:, b] = (_w_dq(q.astype(complex), pc, system).T @ Dq[i]).imag / h
        Jm[sl, sl] += Lqq
        Jm[sl, nd + i * d: nd + (i + 1) * d] += Lqp
        Jm[nd + i * d: nd + (i + 1) * d, sl] += Lpq
    Jm[:nd, :nd] += blocksA.T @ Dk - Dk @ blocksA
    Jm[:nd, nd:2 * nd] += -Dk @ blocksB
    Jm[nd:2 * nd, :nd] += blocksF @ Dk
    Jm[nd:2 * nd, nd:2 * nd] += -loop.eta * np.kron(np.eye(n), G)
    Gp = (loop.p @ G.T).ravel()
    Jm[nd:2 * nd, -1] = -Gp
    Jm[-1, nd:2 * nd] = -Gp
    return Jm / n


@dataclass(frozen=True)
class CriticalPointResult:
    loop: DiscreteLoop = field(repr=False)
    eta: float
    action: float
    loop_residual: float
    mean_residual: float
    iterations: int
    matched: dynamics.ClosedOrbitRecord | None = None
    system: MagneticSystem | None = field(default=None, repr=False, compare=False)

    def summary(self) -> dict:
        m = self.matched
        return {
            "eta": self.eta,
            "action": self.action,
            "loop_residual": self.loop_residual,
            "mean_residual": self.mean_residual,
            "iterations": self.iterations,
            "nodes": self.loop.n,
            "matched": None if m is None else {"k": m.k, "C": m.C, "T": m.T, "l": m.l, "omega": m.omega},
        }


def _split_residual(g: LoopGradient, loop: DiscreteLoop):
    return float(max(np.max(np.abs(g.q)), np.max(np.abs(g.p))) * loop.n), abs(g.eta)


def _match(loop: DiscreteLoop, system: MagneticSystem, tol: float = 1e-6):
    if abs(loop.eta) < 1e-8:
        return None
    try:
        recs = dynamics.contractible_orbits(system, loop.k, l_max=8)
    except Exception:  # noqa: BLE001 - systems without a detector simply do not match
        return None
    for r in recs:
        if abs(abs(loop.eta) - r.period) > tol * max(1.0, r.period):
            continue
        if system.family in (Family.HEISENBERG, Family.PSL2) and abs(np.mean(loop.p[:, 2]) - r.C) > 1e-6:
            continue
        return r
    return None


def find_critical(seed: DiscreteLoop, system: MagneticSystem, tol: float = 1e-10, max_iter: int = 40,
                  escape: float = 10.0) -> CriticalPointResult:
    """Damped Newton iteration on the discrete critical-point equations with
    minimum-norm steps (the critical sets come in families)."""
    _check(system, seed)
    n, d, k = seed.n, seed.dim, seed.k
    loop = seed
    g = gradient(loop, system)
    r = g.norm()
    for it in range(1, max_iter + 1):
        J = _jacobian(loop, system)
        step = np.linalg.lstsq(J, -g.pack(), rcond=RCOND)[0]
        x0 = loop.pack()
        t = 1.0
        while t > 1e-6:
            try:
                cand = DiscreteLoop.unpack(x0 + t * step, n, d, k)
                gc = gradient(cand, system)
            except (PreconditionFailed, ValueError):
                t *= 0.5
                continue
            if gc.norm() < r or t < 1e-3:
                break
            t *= 0.5
        loop, g = cand, gc
        r = g.norm()
        hbar = np.max(np.abs(0.5 * np.einsum("ni,ij,nj->n", loop.p, system.metric, loop.p) - k))
        if hbar > escape * max(k, 1.0):
            raise EscapedShell(f"|H - k| reached {hbar:.3g}")
        if r < tol:
            lr, mr = _split_residual(g, loop)
            return CriticalPointResult(loop, loop.eta, action(loop, system), lr, mr, it, _match(loop, system), system)
    raise NoConvergence(f"no convergence after {max_iter} iterations (gradient norm {r:.3g})")


def gradient_ascent_step(loop: DiscreteLoop, system: MagneticSystem, step: float) -> DiscreteLoop:
    g = gradient(loop, system)
    return DiscreteLoop.unpack(loop.pack() + step * g.pack(), loop.n, loop.dim, loop.k)


# -- seeds ----------------------------------------------------------------------

def orbit_seed(record: dynamics.ClosedOrbitRecord, system: MagneticSystem, n: int = 64, noise: float = 0.0,
               reverse: bool = False, rng=None) -> DiscreteLoop:
    """Nodes of a detected closed orbit, optionally perturbed by relative noise."""
    T = record.period
    ts = np.arange(n) / n * T
    Z = np.array([systems.closed_form_flow(record.start, t, system).z for t in ts])
    eta = T
    if reverse:
        Z = Z[::-1].copy()
        Z = np.roll(Z, 1, axis=0)
        eta = -T
    if noise:
        rng = np.random.default_rng(0) if rng is None else rng
        scale = np.maximum(np.abs(Z).max(axis=0), 1e-3)
        Z = Z + noise * scale * rng.standard_normal(Z.shape)
        eta = eta * (1 + noise * rng.standard_normal())
    d = system.dim
    return DiscreteLoop(Z[:, :d], Z[:, d:], eta, record.k)


# -- period, action and tameness --------------------------------------------------

@dataclass(frozen=True)
class PeriodActionReport:
    omega: float
    eta: float
    action: float
    lambda_period: float | None
    tame_ratio: float | None

    def as_dict(self):
        return dict(self.__dict__)


def loop_trajectory(loop: DiscreteLoop) -> Trajectory:
    """Closed trajectory in flow order with real times, from a critical loop."""
    Z = np.hstack([loop.q, loop.p])
    if loop.eta < 0:
        Z = np.roll(Z[::-1], 1, axis=0)
    Z = np.vstack([Z, Z[:1]])
    T = abs(loop.eta)
    times = np.arange(loop.n + 1) / loop.n * T
    return Trajectory(times, Z, "loop", T / loop.n)


def period_action_check(result, recipe=None, system: MagneticSystem | None = None) -> PeriodActionReport:
    """omega-energy (oriented as the loop is parametrised), eta, the lambda-period
    of the loop and lambda-period / |omega|.  ``result`` is a CriticalPointResult
    or a bare DiscreteLoop."""
    loop = result.loop if isinstance(result, CriticalPointResult) else result
    system = system or getattr(result, "system", None) or getattr(recipe, "system", None)
    if system is None:
        raise ValueError("cannot tell which system the loop lives on")
    return _period_action(loop, system, recipe)


def _period_action(loop: DiscreteLoop, system: MagneticSystem, recipe) -> PeriodActionReport:
    A = action(loop, system)
    if abs(loop.eta) < 1e-12 or np.ptp(loop.q, axis=0).max() < 1e-14:
        return PeriodActionReport(0.0, loop.eta, A, 0.0 if recipe is not None else None, 0.0 if recipe is not None else None)
    omega = math.copysign(dynamics.omega_energy(loop_trajectory(loop), system), loop.eta)
    lam = ratio = None
    if recipe is not None:
        Z = np.hstack([loop.q, loop.p])
        DZ = _dmat(loop.n) @ Z
        lam = float(np.mean([recipe.covector(z) @ dz for z, dz in zip(Z, DZ)]))
        ratio = lam / abs(omega) if omega != 0 else math.inf
    return PeriodActionReport(omega, loop.eta, A, lam, ratio)


# -- displacement energy spot check -------------------------------------------------

@dataclass(frozen=True)
class SchlenkCheck:
    min_omega: float
    hofer_norm: float
    displacement_time: float
    holds: bool

    def as_dict(self):
        return dict(self.__dict__)


def _cutoff(r, r0, r1):
    """Smooth step: 1 for r <= r0, 0 for r >= r1."""
    s = np.clip((r - r0) / (r1 - r0), 0.0, 1.0)
    return 1.0 - s * s * s * (10 - 15 * s + 6 * s * s)


def schlenk_check(system: MagneticSystem, k: float, a=None, grid: int = 401) -> SchlenkCheck:
    """Compare the smallest omega-energy of a contractible orbit at level k with
    the Hofer norm of a cut-off linear Hamiltonian that displaces the level."""
    if system.family is not Family.TORUS:
        raise PreconditionFailed("the displacement spot check is implemented for tori")
    probe = dynamics.displacement_probe(system, k, a=a)
    recs = dynamics.contractible_orbits(system, k, l_max=1)
    if not recs:
        raise PreconditionFailed("no contractible orbits at this level")
    min_omega = min(r.omega for r in recs)
    if a is None:
        J = system.J
        i = int(np.argmax(np.linalg.norm(J, axis=0)))
        a = np.eye(system.dim)[i]
    a = np.asarray(a, dtype=float)
    r = math.sqrt(2 * k)
    r0, r1 = 3 * r, 4 * r  # the probe flow stays inside |p| <= 3 sqrt(2k)
    if system.dim == 2:
        xs = np.linspace(-r1, r1, grid)
        P = np.stack(np.meshgrid(xs, xs), axis=-1).reshape(-1, 2)
    else:
        rng = np.random.default_rng(0)
        P = rng.uniform(-r1, r1, (grid * grid, system.dim))
    vals = _cutoff(np.linalg.norm(P, axis=1), r0, r1) * (P @ a)
    osc = float(vals.max() - vals.min())
    hofer = probe.exit_time * osc
    return SchlenkCheck(float(min_omega), hofer, probe.exit_time, bool(min_omega <= hofer))
