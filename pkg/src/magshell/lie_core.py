"""Lie-algebraic kernel.

Structure constants, brackets, the twisted Lie-Poisson bracket on the dual
of a Lie algebra, the associated Euler vector field and closed-form matrix
exponentials for the built-in model groups.

Conventions.  A basis X_0..X_{d-1} of the Lie algebra is fixed per family and
``c[i, j, k]`` is the coefficient of X_k in [X_i, X_j].  Momenta are the
components of a covector in the dual basis.  ``sigma[i, j]`` is the value of
the magnetic 2-form at the identity on (X_i, X_j).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

PARABOLIC_BAND = 1e-12


class Family(str, enum.Enum):
    TORUS = "torus"
    HEISENBERG = "heisenberg"
    PSL2 = "psl2"
    SOL = "sol"
    NIL4 = "nil4"


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class StructureConstants:
    c: np.ndarray

    def __post_init__(self):
        c = _frozen(self.c)
        if c.ndim != 3 or not (c.shape[0] == c.shape[1] == c.shape[2]):
            raise DimensionMismatch(f"structure constants must be (d, d, d), got {c.shape}")
        if not np.array_equal(c, -np.swapaxes(c, 0, 1)):
            raise ValueError("structure constants are not antisymmetric in (i, j)")
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    def jacobi_residual(self) -> float:
        """Max |[[X_i,X_j],X_l] + cyclic| over all basis triples."""
        c = self.c
        # [[X_i,X_j],X_l] = sum_k c_ijk [X_k, X_l] = sum_k c_ijk c_klm X_m
        t = np.einsum("ijk,klm->ijlm", c, c)
        cyc = t + np.einsum("jlim->ijlm", t) + np.einsum("lijm->ijlm", t)
        return float(np.max(np.abs(cyc))) if cyc.size else 0.0


def abelian_constants(n: int) -> StructureConstants:
    return StructureConstants(np.zeros((n, n, n)))


def heisenberg_constants() -> StructureConstants:
    c = np.zeros((3, 3, 3))
    c[0, 1, 2], c[1, 0, 2] = 1.0, -1.0  # [X_a, X_b] = X_g
    return StructureConstants(c)


def psl2_constants() -> StructureConstants:
    # basis (X, Y, V): [X,Y] = -V, [V,X] = Y, [V,Y] = -X
    c = np.zeros((3, 3, 3))
    c[0, 1, 2], c[1, 0, 2] = -1.0, 1.0
    c[2, 0, 1], c[0, 2, 1] = 1.0, -1.0
    c[2, 1, 0], c[1, 2, 0] = -1.0, 1.0
    return StructureConstants(c)


def sol_constants() -> StructureConstants:
    # basis (X0, X1, U): [U,X0] = X0, [U,X1] = -X1
    c = np.zeros((3, 3, 3))
    c[2, 0, 0], c[0, 2, 0] = 1.0, -1.0
    c[2, 1, 1], c[1, 2, 1] = -1.0, 1.0
    return StructureConstants(c)


def nil4_constants() -> StructureConstants:
    c = np.zeros((4, 4, 4))
    c[0, 1, 2], c[1, 0, 2] = 1.0, -1.0
    return StructureConstants(c)


def structure_constants(family: Family, n: int = 2) -> StructureConstants:
    family = Family(family)
    if family is Family.TORUS:
        return abelian_constants(n)
    return {
        Family.HEISENBERG: heisenberg_constants,
        Family.PSL2: psl2_constants,
        Family.SOL: sol_constants,
        Family.NIL4: nil4_constants,
    }[family]()


def cocycle_residual(sigma: np.ndarray, sc: StructureConstants) -> float:
    """Max |d sigma| on basis triples; zero iff the left-invariant 2-form is closed."""
    s = np.asarray(sigma, dtype=float)
    # d sigma(X,Y,Z) = -sigma([X,Y],Z) + sigma([X,Z],Y) - sigma([Y,Z],X)
    t = np.einsum("ijk,kl->ijl", sc.c, s)
    d = -t + np.einsum("ilj->ijl", t) - np.einsum("jli->ijl", t)
    return float(np.max(np.abs(d))) if d.size else 0.0


def bracket(x, y, sc: StructureConstants) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (sc.dim,) or y.shape != (sc.dim,):
        raise DimensionMismatch(f"expected vectors of length {sc.dim}, got {x.shape} and {y.shape}")
    return np.einsum("i,j,ijk->k", x, y, sc.c)


def twisted_bracket(df, dg, mu, system) -> float:
    """{f,g}(mu) = mu([df, dg]) - sigma(df, dg) for differentials df, dg at mu."""
    df = np.asarray(df)
    dg = np.asarray(dg)
    return float(np.asarray(mu) @ bracket(df, dg, system.structure) - df @ system.sigma @ dg)


def poisson_bracket(i: int, j: int, mu, system) -> float:
    """Twisted bracket of the coordinate functions mu_i and mu_j."""
    d = system.structure.dim
    if not (0 <= i < d and 0 <= j < d):
        raise IndexError(f"coordinate indices must lie in [0, {d}), got ({i}, {j})")
    mu = np.asarray(mu, dtype=float)
    return float(system.structure.c[i, j] @ mu - system.sigma[i, j])


def euler_field(mu, system, dh=None) -> np.ndarray:
    """Euler vector field E_f(mu)(w) = mu([df, w]) - sigma(df, w).

    ``dh`` is the differential of the generating function at mu; by default
    it is that of the kinetic Hamiltonian, metric @ mu.
    """
    mu = np.asarray(mu)
    if dh is None:
        dh = system.metric @ mu
    return np.einsum("i,ijk,k->j", dh, system.structure.c, mu) - dh @ system.sigma


def euler_jacobian(mu, system) -> np.ndarray:
    """Exact derivative of the kinetic Euler field, D[j, m] = dE_j / dmu_m."""
    mu = np.asarray(mu, dtype=float)
    c, s, g = system.structure.c, system.sigma, system.metric
    a = np.einsum("ijk,k->ij", c, mu) - s  # a[i, j]
    return (g @ a).T + np.einsum("i,ijm->jm", g @ mu, c)


# -- matrix realisations ----------------------------------------------------

def algebra_basis(family: Family, n: int = 2) -> np.ndarray:
    """Matrices representing the basis of the Lie algebra, shape (d, r, r)."""
    family = Family(family)
    if family is Family.TORUS:
        b = np.zeros((n, n + 1, n + 1))
        for i in range(n):
            b[i, i, n] = 1.0
        return b
    if family is Family.HEISENBERG:
        b = np.zeros((3, 3, 3))
        b[0, 0, 1] = b[1, 1, 2] = b[2, 0, 2] = 1.0
        return b
    if family is Family.PSL2:
        return np.array([
            [[0.5, 0.0], [0.0, -0.5]],
            [[0.0, -0.5], [-0.5, 0.0]],
            [[0.0, 0.5], [-0.5, 0.0]],
        ])
    if family is Family.SOL:
        b = np.zeros((3, 3, 3))
        b[0, 0, 2] = b[1, 1, 2] = 1.0
        b[2, 0, 0], b[2, 1, 1] = 1.0, -1.0
        return b
    b = np.zeros((4, 5, 5))
    b[0, 0, 1] = b[1, 1, 2] = b[2, 0, 2] = b[3, 3, 4] = 1.0
    return b


@dataclass(frozen=True)
class GroupElement:
    family: Family
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "matrix", _frozen(self.matrix))

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.family, self.matrix @ other.matrix)

    def inverse(self) -> "GroupElement":
        return GroupElement(self.family, np.linalg.inv(self.matrix))

    def distance(self, other: "GroupElement") -> float:
        d = float(np.max(np.abs(self.matrix - other.matrix)))
        if self.family is Family.PSL2:
            d = min(d, float(np.max(np.abs(self.matrix + other.matrix))))
        return d

    def isclose(self, other: "GroupElement", tol: float = 1e-10) -> bool:
        return self.family is other.family and self.distance(other) <= tol

    def membership_residual(self) -> float:
        m = self.matrix
        if self.family is Family.PSL2:
            return abs(float(np.linalg.det(m)) - 1.0)
        r = m.shape[0]
        # affine / unipotent / Sol shapes share a unit last row
        res = float(np.max(np.abs(m[-1] - np.eye(r)[-1])))
        if self.family is Family.HEISENBERG:
            res = max(res, abs(m[0, 0] - 1), abs(m[1, 1] - 1), abs(m[1, 0]), abs(m[2, 1]))
        elif self.family is Family.SOL:
            res = max(res, abs(m[0, 0] * m[1, 1] - 1), abs(m[0, 1]), abs(m[1, 0]))
        return res


def identity(family: Family, n: int = 2) -> GroupElement:
    r = algebra_basis(family, n).shape[1]
    return GroupElement(family, np.eye(r))


def algebra_matrix(x, family: Family, n: int = 2) -> np.ndarray:
    basis = algebra_basis(family, n)
    x = np.asarray(x)
    if x.shape[-1] != basis.shape[0]:
        raise DimensionMismatch(f"{family} algebra has dimension {basis.shape[0]}")
    return np.tensordot(x, basis, axes=(-1, 0))


def expm_sl2(m: np.ndarray) -> np.ndarray:
    """Closed-form exponential of a traceless 2x2 matrix.

    Uses m^2 = -det(m) I.  Near the parabolic boundary a short series in
    det(m) replaces the trigonometric branches.
    """
    m = np.asarray(m, dtype=float)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < PARABOLIC_BAND:
        c = 1.0 - det / 2.0 + det * det / 24.0
        s = 1.0 - det / 6.0 + det * det / 120.0
    elif det > 0:
        w = np.sqrt(det)
        c, s = np.cos(w), np.sin(w) / w
    else:
        w = np.sqrt(-det)
        c, s = np.cosh(w), np.sinh(w) / w
    return c * np.eye(2) + s * m


def _exprel(x: float) -> float:
    return 1.0 if x == 0.0 else np.expm1(x) / x


def exp_map(x, t: float, family: Family, n: int = 2) -> GroupElement:
    """exp(t x) in the matrix realisation of the family, in closed form."""
    family = Family(family)
    x = np.asarray(x, dtype=float) * t
    m = algebra_matrix(x, family, n)
    if family is Family.PSL2:
        g = expm_sl2(m)
    elif family in (Family.TORUS,):
        g = np.eye(m.shape[0]) + m
    elif family in (Family.HEISENBERG, Family.NIL4):
        g = np.eye(m.shape[0]) + m + 0.5 * m @ m
    else:
        a, b, c = x
        g = np.array([
            [np.exp(c), 0.0, a * _exprel(c)],
            [0.0, np.exp(-c), b * _exprel(-c)],
            [0.0, 0.0, 1.0],
        ])
    return GroupElement(family, g)


def classify_traceless(m: np.ndarray) -> str:
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < PARABOLIC_BAND:
        return "parabolic"
    return "elliptic" if det > 0 else "hyperbolic"
