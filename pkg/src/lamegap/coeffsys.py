"""Energy inner products of the decomposition fields and the 6x6 system for C_i^alpha."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elasticity import ElasticConstants, strain, tensor_inner
from .meshgen import Region
from .solvers import DecompositionSet, RigidCoefficients

__all__ = [
    "CoefficientSystem",
    "SingularSystemError",
    "AuditReport",
    "assemble_coefficient_system",
    "solve_coefficients",
    "cramer_differences",
    "spectral_audit",
    "AUDIT_HEADER",
]

AUDIT_HEADER = ("epsilon,a11_11,a11_22,a11_33,a11_12,a11_13,a11_23,det_a11,min_eig,"
                "c1_minus_c2_1,c1_minus_c2_2")


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, msg, cond):
        super().__init__(msg)
        self.cond = cond


@dataclass
class CoefficientSystem:
    """``a[i-1, j-1]`` is the 3x3 block a_ij with entries a_ij^{alpha beta}; ``b[j-1]`` the loads."""

    a: np.ndarray  # (2, 2, 3, 3)
    b: np.ndarray  # (2, 3)

    @property
    def a11(self):
        return self.a[0, 0]

    @property
    def a12(self):
        return self.a[0, 1]

    @property
    def a21(self):
        return self.a[1, 0]

    @property
    def a22(self):
        return self.a[1, 1]

    def matrix(self):
        """6x6 matrix M with M[(j, beta), (i, alpha)] = a_ij^{alpha beta}."""
        M = np.empty((6, 6))
        for i in range(2):
            for j in range(2):
                M[3 * j:3 * j + 3, 3 * i:3 * i + 3] = self.a[i, j].T
        return M

    def rhs(self):
        return self.b.reshape(6)

    def p(self, C2):
        """p^beta = b_1^beta - sum_alpha (a_11^{alpha beta} + a_21^{alpha beta}) C_2^alpha."""
        C2 = np.asarray(C2, dtype=float)
        return self.b[0] - (self.a11 + self.a21).T @ C2

    def symmetry_defect(self):
        return float(np.abs(self.a - np.transpose(self.a, (1, 0, 3, 2))).max())


def _pair_energy(mesh, tris, lam, mu, Ea, Eb):
    return float(np.sum(mesh.areas[tris] * tensor_inner(lam, mu, Ea, Eb)))


def assemble_coefficient_system(dec: DecompositionSet, c: ElasticConstants) -> CoefficientSystem:
    mesh = dec.mesh
    tris = mesh.tris_in(Region.MATRIX)
    for f in list(dec.v.values()) + [dec.v3]:
        if f.mesh is not mesh:
            raise ValueError("decomposition fields live on different meshes")
    keys = [(i, a) for i in (1, 2) for a in (1, 2, 3)]
    E = {k: strain(dec.v[k].gradients(tris)) for k in keys}
    E3 = strain(dec.v3.gradients(tris))
    a = np.empty((2, 2, 3, 3))
    for (i, al) in keys:
        for (j, be) in keys:
            a[i - 1, j - 1, al - 1, be - 1] = _pair_energy(mesh, tris, c.lam, c.mu, E[(i, al)], E[(j, be)])
    b = np.empty((2, 3))
    for (j, be) in keys:
        b[j - 1, be - 1] = -_pair_energy(mesh, tris, c.lam, c.mu, E3, E[(j, be)])
    return CoefficientSystem(a, b)


def solve_coefficients(sys: CoefficientSystem, cond_max=1e14) -> RigidCoefficients:
    """Dense LU (partial pivoting) solve of the six equations
    sum_alpha C_1^alpha a_1j^{alpha beta} + C_2^alpha a_2j^{alpha beta} = b_j^beta."""
    M = sys.matrix()
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > cond_max:
        raise SingularSystemError(f"coefficient system is singular (condition estimate {cond:.3e})", cond)
    x = np.linalg.solve(M, sys.rhs())
    return RigidCoefficients(x.reshape(2, 3))


def _det3(m):
    return (m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
            - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
            + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0]))


def cramer_differences(a11, p):
    """Cramer's rule for a11 X = p: returns (X_1, X_2) = (C_1^1 - C_2^1, C_1^2 - C_2^2)."""
    a11 = np.asarray(a11, dtype=float)
    p = np.asarray(p, dtype=float)
    det = _det3(a11)
    scale = float(np.prod(np.linalg.norm(a11, axis=1)))
    if not abs(det) > 1e-14 * scale:
        raise SingularSystemError(f"det a11 = {det:.3e} is below 1e-14 x row-norm scale {scale:.3e}",
                                  float("inf"))
    out = []
    for k in (0, 1):
        mk = a11.copy()
        mk[:, k] = p
        out.append(_det3(mk) / det)
    return out[0], out[1]


@dataclass
class AuditReport:
    epsilon: float
    m: float
    min_eig: float
    a11_11: float
    a11_22: float
    a11_33: float
    a11_12: float
    a11_13: float
    a11_23: float
    det_a11: float
    scaled_a11_11: float
    scaled_a11_22: float
    scaled_det: float
    c_diff_1: float = float("nan")
    c_diff_2: float = float("nan")
    cramer_1: float = float("nan")
    cramer_2: float = float("nan")

    def csv_row(self):
        vals = [self.epsilon, self.a11_11, self.a11_22, self.a11_33, self.a11_12, self.a11_13,
                self.a11_23, self.det_a11, self.min_eig, self.c_diff_1, self.c_diff_2]
        return ",".join(f"{v:.17g}" for v in vals)


def spectral_audit(sys: CoefficientSystem, geom, C: RigidCoefficients | None = None) -> AuditReport:
    """Entries of a11, its determinant and smallest eigenvalue, and their products with the
    predicted powers of eps (eps^{1-1/m} a11^{aa}, eps^{2-2/m} det a11)."""
    a = sys.a11
    eps = float(geom.epsilon)
    m = float(geom.m)
    k = 1.0 - 1.0 / m
    det = float(np.linalg.det(a))
    rep = AuditReport(eps, m, float(np.linalg.eigvalsh(0.5 * (a + a.T)).min()),
                      a[0, 0], a[1, 1], a[2, 2], a[0, 1], a[0, 2], a[1, 2], det,
                      eps**k * a[0, 0], eps**k * a[1, 1], eps ** (2 * k) * det)
    if C is not None:
        d = C.diff
        rep.c_diff_1, rep.c_diff_2 = float(d[0]), float(d[1])
        try:
            rep.cramer_1, rep.cramer_2 = cramer_differences(a, sys.p(C.C[1]))
        except SingularSystemError:
            pass
    return rep
