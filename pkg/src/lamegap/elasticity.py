"""Isotropic elasticity: constants, strains, energies, rigid motions, Lame operator."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .meshgen import BoundaryTag, Mesh, Region, _as_region_set

__all__ = [
    "ElasticConstants",
    "VectorField",
    "RigidMotion",
    "AnalyticField",
    "EmptyRegionWarning",
    "rigid_basis",
    "strain",
    "apply_tensor",
    "tensor_inner",
    "energy",
    "element_energy_density",
    "lame_apply",
    "first_korn_check",
    "ROT",
]

ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])  # gradient of psi^3


class EmptyRegionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ElasticConstants:
    """Lame pair of the matrix and, optionally, of the inclusions."""

    lam: float
    mu: float
    lam1: float | None = None
    mu1: float | None = None

    def __post_init__(self):
        _check_pair(self.lam, self.mu, "matrix")
        if (self.lam1 is None) != (self.mu1 is None):
            raise ValueError("lam1 and mu1 must be given together")
        if self.lam1 is not None:
            _check_pair(self.lam1, self.mu1, "inclusion")

    @property
    def has_inclusion_material(self):
        return self.lam1 is not None

    def for_region(self, region):
        if int(region) == Region.MATRIX or not self.has_inclusion_material:
            return self.lam, self.mu
        return self.lam1, self.mu1

    def with_inclusion(self, lam1, mu1):
        return ElasticConstants(self.lam, self.mu, lam1, mu1)

    def limit_ellipticity(self):
        """Largest delta0 with delta0 <= mu and lam + mu <= 1/delta0."""
        return min(self.mu, 1.0 / (self.lam + self.mu)) if self.lam + self.mu > 0 else self.mu


def _check_pair(lam, mu, what):
    if not (np.isfinite(lam) and np.isfinite(mu)):
        raise ValueError(f"{what} Lame constants must be finite")
    if mu <= 0:
        raise ValueError(f"{what} shear modulus must be positive (mu={mu})")
    if 2 * lam + 2 * mu <= 0:
        raise ValueError(f"{what} constants violate 2*lambda + 2*mu > 0")


# -- rigid motions ------------------------------------------------------------------


def rigid_basis(alpha, x):
    """psi^1 = (1, 0), psi^2 = (0, 1), psi^3 = (x2, -x1); ``x`` may be (2,) or (n, 2)."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    if alpha == 1:
        out = np.tile([1.0, 0.0], (len(pts), 1))
    elif alpha == 2:
        out = np.tile([0.0, 1.0], (len(pts), 1))
    elif alpha == 3:
        out = np.stack([pts[:, 1], -pts[:, 0]], axis=-1)
    else:
        raise ValueError(f"rigid mode index must be 1, 2 or 3 (got {alpha})")
    return out[0] if x.ndim == 1 else out


@dataclass(frozen=True)
class RigidMotion:
    c: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        c1, c2, c3 = self.c
        out = np.stack([c1 + c3 * pts[:, 1], c2 - c3 * pts[:, 0]], axis=-1)
        return out[0] if x.ndim == 1 else out

    @property
    def gradient(self):
        return self.c[2] * ROT


# -- tensors -------------------------------------------------------------------------


def strain(grad):
    g = np.asarray(grad, dtype=float)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def apply_tensor(c: ElasticConstants, A, lam=None, mu=None):
    """``lam*tr(A)*I + 2*mu*A`` for symmetric ``A`` (shape (..., 2, 2))."""
    A = np.asarray(A, dtype=float)
    lam = c.lam if lam is None else lam
    mu = c.mu if mu is None else mu
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    if np.abs(A - np.swapaxes(A, -1, -2)).max(initial=0.0) > 1e-12 * scale:
        raise ValueError("apply_tensor expects a symmetric matrix")
    tr = A[..., 0, 0] + A[..., 1, 1]
    out = 2.0 * mu * A
    out[..., 0, 0] += lam * tr
    out[..., 1, 1] += lam * tr
    return out


def tensor_inner(lam, mu, A, B):
    """(C A, B) for symmetric A, B; the expression is symmetric in A and B bit for bit."""
    trA = A[..., 0, 0] + A[..., 1, 1]
    trB = B[..., 0, 0] + B[..., 1, 1]
    return lam * (trA * trB) + 2.0 * mu * (
        A[..., 0, 0] * B[..., 0, 0] + 2.0 * (A[..., 0, 1] * B[..., 0, 1]) + A[..., 1, 1] * B[..., 1, 1])


# -- discrete fields -------------------------------------------------------------------


class VectorField:
    """P1 displacement field: one 2-vector per mesh node."""

    def __init__(self, mesh: Mesh, values):
        values = np.asarray(values, dtype=float)
        if values.shape == (2 * mesh.n_nodes,):
            values = values.reshape(-1, 2)
        if values.shape != (mesh.n_nodes, 2):
            raise ValueError(f"expected {mesh.n_nodes}x2 nodal values, got {values.shape}")
        self.mesh = mesh
        self.values = values
        self._grads = None

    @classmethod
    def interpolate(cls, mesh, fn: Callable):
        return cls(mesh, fn(mesh.nodes))

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros((mesh.n_nodes, 2)))

    @property
    def flat(self):
        return self.values.reshape(-1)

    def gradients(self, tris=None):
        """Per-triangle constant gradient ``G[t, i, j] = d u^i / d x_j``."""
        if self._grads is None:
            b, c, _ = self.mesh.geometry_arrays
            U = self.values[self.mesh.triangles]  # (T, 3, 2)
            G = np.empty((len(b), 2, 2))
            G[:, :, 0] = np.einsum("tki,tk->ti", U, b)
            G[:, :, 1] = np.einsum("tki,tk->ti", U, c)
            G.setflags(write=False)
            self._grads = G
        return self._grads if tris is None else self._grads[tris]

    def grad_norms(self, tris=None):
        G = self.gradients(tris)
        return np.sqrt((G * G).sum(axis=(-1, -2)))

    def _check_same(self, other):
        if other.mesh is not self.mesh:
            raise ValueError("fields live on different meshes")

    def __add__(self, other):
        self._check_same(other)
        return VectorField(self.mesh, self.values + other.values)

    def __sub__(self, other):
        self._check_same(other)
        return VectorField(self.mesh, self.values - other.values)

    def __mul__(self, s):
        return VectorField(self.mesh, float(s) * self.values)

    __rmul__ = __mul__

    def write(self, path):
        with open(path, "w") as fh:
            for k, (ux, uy) in enumerate(self.values):
                fh.write(f"u {k} {ux:.17g} {uy:.17g}\n")

    @classmethod
    def read(cls, mesh, path):
        vals = np.zeros((mesh.n_nodes, 2))
        with open(path) as fh:
            for line in fh:
                p = line.split()
                if p and p[0] == "u":
                    vals[int(p[1])] = float(p[2]), float(p[3])
        return cls(mesh, vals)


def _region_material(mesh, c, tris):
    lam = np.full(len(tris), c.lam)
    mu = np.full(len(tris), c.mu)
    if c.has_inclusion_material:
        inc = mesh.region[tris] != Region.MATRIX
        lam[inc] = c.lam1
        mu[inc] = c.mu1
    return lam, mu


def element_energy_density(mesh, field: VectorField, c: ElasticConstants, tris):
    """(C e(u), e(u)) on each listed triangle."""
    E = strain(field.gradients(tris))
    lam, mu = _region_material(mesh, c, tris)
    return tensor_inner(lam, mu, E, E)


def energy(mesh: Mesh, field: VectorField, c: ElasticConstants, region=(Region.MATRIX,)):
    """1/2 * sum over triangles in ``region`` of area * (C e, e), fixed element order."""
    tris = mesh.tris_in(_as_region_set(region))
    if len(tris) == 0:
        warnings.warn("energy requested over an empty region", EmptyRegionWarning, stacklevel=2)
        return 0.0
    dens = element_energy_density(mesh, field, c, tris)
    return float(0.5 * np.sum(mesh.areas[tris] * dens))


# -- analytic fields and the Lame operator ------------------------------------------------


@dataclass(frozen=True)
class AnalyticField:
    """Closed-form field: ``value(x) -> (..., 2)``, ``gradient(x) -> (..., 2, 2)`` with
    ``[i, j] = d u^i/d x_j`` and ``hessian(x) -> (..., 2, 2, 2)`` with
    ``[i, j, k] = d^2 u^i / d x_j d x_k``."""

    value: Callable
    gradient: Callable
    hessian: Callable


def lame_apply(field: AnalyticField, x, c: ElasticConstants):
    """(L u)^i = mu * Lap u^i + (lam + mu) * (d_{i1} u^1 + d_{i2} u^2)."""
    H = np.asarray(field.hessian(np.asarray(x, dtype=float)))
    lap = H[..., :, 0, 0] + H[..., :, 1, 1]
    graddiv = np.stack([H[..., 0, 0, 0] + H[..., 1, 0, 1],
                        H[..., 0, 1, 0] + H[..., 1, 1, 1]], axis=-1)
    return c.mu * lap + (c.lam + c.mu) * graddiv


# -- Korn ---------------------------------------------------------------------------


def first_korn_check(mesh: Mesh, field: VectorField, atol=0.0):
    """||grad u||^2 / ||e(u)||^2 over the whole mesh for a field vanishing on OUTER.

    Returns 1 for the zero field (0/0 convention).
    """
    outer = mesh.boundary_nodes(BoundaryTag.OUTER)
    if np.abs(field.values[outer]).max(initial=0.0) > atol:
        raise ValueError("first_korn_check needs a field vanishing on the outer boundary")
    G = field.gradients()
    E = strain(G)
    a = mesh.areas
    num = float(np.sum(a * (G * G).sum(axis=(1, 2))))
    den = float(np.sum(a * (E * E).sum(axis=(1, 2))))
    if num == 0.0 and den == 0.0:
        return 1.0
    return num / den
