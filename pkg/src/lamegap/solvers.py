"""Limit (rigid-inclusion) problem, finite-coefficient problem, decomposition fields and
the stiff-inclusion convergence study."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .elasticity import ROT, ElasticConstants, VectorField, energy, rigid_basis, strain, apply_tensor
from .geometry import GapGeometry
from .meshgen import BoundaryTag, Mesh, Region
from .sparsela import ConstraintSpec, SolverOptions, SparseSystem, assemble, factorize, solve_spd, stiffness_matrix

__all__ = [
    "BOUNDARY_DATA",
    "boundary_data",
    "RigidCoefficients",
    "LimitSolution",
    "DecompositionSet",
    "ConvergenceRow",
    "ConvergenceTable",
    "solve_limit",
    "solve_finite",
    "solve_decomposition",
    "reconstruct",
    "h1_norm",
    "h1_distance",
    "convergence_study",
    "manufactured_traction_tolerance",
    "harmonic_gradient_field",
    "manufactured_h1_error",
    "manufactured_rate",
    "inclusion_gradient_error",
    "finite_energy",
]


# -- boundary data ----------------------------------------------------------------------


def _phi_smooth(x):
    x1, x2 = x[:, 0], x[:, 1]
    return np.stack([np.sin(0.7 * x1 + 0.4) + 0.3 * x2,
                     0.5 * np.cos(0.9 * x2 - 0.2) + 0.2 * x1 * x2], axis=-1)


BOUNDARY_DATA: dict[str, Callable] = {
    "zero": lambda x: np.zeros((len(x), 2)),
    "psi1": lambda x: rigid_basis(1, x),
    "psi2": lambda x: rigid_basis(2, x),
    "psi3": lambda x: rigid_basis(3, x),
    "shear": lambda x: np.stack([x[:, 1], np.zeros(len(x))], axis=-1),
    "smooth": _phi_smooth,
}


def boundary_data(name, scale=1.0):
    try:
        fn = BOUNDARY_DATA[name]
    except KeyError:
        raise ValueError(f"unknown boundary data id {name!r}; known: {sorted(BOUNDARY_DATA)}") from None
    if scale == 1.0:
        return fn
    return lambda x: scale * fn(x)


def _eval_phi(phi, pts):
    vals = np.asarray(phi(np.atleast_2d(pts)), dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(vals)):
        raise ValueError("boundary data phi produced non-finite values")
    return vals


# -- result types -----------------------------------------------------------------------


@dataclass(frozen=True)
class RigidCoefficients:
    """``C[i-1, alpha-1]`` is the coefficient of psi^alpha on D_i."""

    C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float).reshape(2, 3))

    def get(self, i, alpha):
        return float(self.C[i - 1, alpha - 1])

    @property
    def diff(self):
        """C_1 - C_2 (3-vector)."""
        return self.C[0] - self.C[1]

    def __add__(self, other):
        return RigidCoefficients(self.C + other.C)


@dataclass
class LimitSolution:
    field: VectorField
    coeffs: RigidCoefficients
    energy: float
    traction: np.ndarray  # (2, 3): variational reaction against psi^alpha on D_i
    traction_edge: np.ndarray  # (2, 3): edge quadrature of (C e(u)) n . psi^alpha
    stats: object = None


@dataclass
class DecompositionSet:
    mesh: Mesh
    v: dict  # (i, alpha) -> VectorField
    v3: VectorField
    stats: list = field(default_factory=list)

    def field(self, i, alpha):
        return self.v[(i, alpha)]


# -- helpers -----------------------------------------------------------------------------


def _solve(system: SparseSystem, opts: SolverOptions, x0=None):
    if opts.mode == "direct":
        return factorize(system).solve(system.rhs)
    return solve_spd(system, opts.tol, opts.max_iter, opts.precond, "cg", x0=x0)


def _rigid_reactions(mesh, K, u):
    """sum over D_i nodes of (K u) . psi^alpha: the discrete net traction."""
    R = (K @ u).reshape(-1, 2)
    out = np.zeros((2, 3))
    for i in (1, 2):
        nd = mesh.inclusion_nodes(i)
        for a in (1, 2, 3):
            out[i - 1, a - 1] = np.sum(R[nd] * rigid_basis(a, mesh.nodes[nd]))
    return out


def edge_tractions(mesh: Mesh, field: VectorField, c: ElasticConstants):
    """Integral over Gamma_i of (C e(u)|_matrix) n . psi^alpha with n the outward normal of D_i.

    Uses the adjacent MATRIX triangle's constant stress and the exact integral of the
    linear psi along each edge.
    """
    T = mesh.triangles
    mt = mesh.tris_in(Region.MATRIX)
    edge_owner = {}
    for t in mt:
        a, b, cc = T[t]
        for e in ((a, b), (b, cc), (cc, a)):
            edge_owner[(min(e), max(e))] = t
    sig = apply_tensor(c, strain(field.gradients()))
    out = np.zeros((2, 3))
    for i, tag in ((1, BoundaryTag.GAMMA1), (2, BoundaryTag.GAMMA2)):
        for (p, q) in mesh.boundary_edges[mesh.boundary_tag == int(tag)]:
            t = edge_owner.get((min(p, q), max(p, q)))
            if t is None:
                continue
            xp, xq = mesh.nodes[p], mesh.nodes[q]
            d = xq - xp
            n = np.array([d[1], -d[0]])
            # orient n from the inclusion into the matrix (towards the triangle's centroid)
            if np.dot(mesh.nodes[T[t]].mean(0) - xp, n) < 0:
                n = -n
            tvec = sig[t] @ n  # already scaled by edge length
            mid = 0.5 * (xp + xq)
            for a in (1, 2, 3):
                out[i - 1, a - 1] += tvec @ rigid_basis(a, mid)
    return out


# -- the limit problem ---------------------------------------------------------------------


def limit_constraints(mesh: Mesh, phi):
    outer = mesh.boundary_nodes(BoundaryTag.OUTER)
    return ConstraintSpec(outer, _eval_phi(phi, mesh.nodes[outer]),
                          (mesh.inclusion_nodes(1), mesh.inclusion_nodes(2)), (Region.MATRIX,))


def solve_limit(mesh: Mesh, geom: GapGeometry | None, c: ElasticConstants, phi,
                opts: SolverOptions = SolverOptions(), x0=None) -> LimitSolution:
    """Discrete minimiser of the matrix energy over fields rigid on each inclusion."""
    cm = ElasticConstants(c.lam, c.mu)
    system = assemble(mesh, cm, constraints=limit_constraints(mesh, phi))
    z, stats = _solve(system, opts, x0)
    u = system.expand(z)
    C = system.rigid_dofs(z)
    fld = VectorField(mesh, u)
    react = _rigid_reactions(mesh, system.K, u)
    return LimitSolution(fld, RigidCoefficients(C), energy(mesh, fld, cm, Region.MATRIX),
                         react, edge_tractions(mesh, fld, cm), stats)


def solve_finite(mesh: Mesh, geom: GapGeometry | None, c: ElasticConstants, phi,
                 opts: SolverOptions = SolverOptions()) -> VectorField:
    """Discrete minimiser of the two-material energy with trace phi on the outer boundary."""
    if not c.has_inclusion_material:
        raise ValueError("solve_finite needs inclusion constants (lam1, mu1)")
    outer = mesh.boundary_nodes(BoundaryTag.OUTER)
    cons = ConstraintSpec(outer, _eval_phi(phi, mesh.nodes[outer]), (),
                          (Region.MATRIX, Region.INCL1, Region.INCL2))
    system = assemble(mesh, c, constraints=cons)
    z, _ = _solve(system, opts)
    return VectorField(mesh, system.expand(z))


def finite_energy(mesh, u: VectorField, c: ElasticConstants):
    return energy(mesh, u, c, (Region.MATRIX, Region.INCL1, Region.INCL2))


# -- decomposition -------------------------------------------------------------------------


def solve_decomposition(mesh: Mesh, geom: GapGeometry | None, c: ElasticConstants, phi,
                        opts: SolverOptions = SolverOptions()) -> DecompositionSet:
    """The seven Dirichlet problems on the matrix: v_i^alpha (trace psi^alpha on D_i, zero on the
    other inclusion and on the outer boundary) and v_3 (zero on both inclusions, phi outside).

    All seven share one matrix; in direct mode it is factorised once.
    """
    cm = ElasticConstants(c.lam, c.mu)
    outer = mesh.boundary_nodes(BoundaryTag.OUTER)
    d1, d2 = mesh.inclusion_nodes(1), mesh.inclusion_nodes(2)
    nodes = np.concatenate([outer, d1, d2])
    cons = ConstraintSpec(nodes, np.zeros((len(nodes), 2)), (), (Region.MATRIX,))
    system = assemble(mesh, cm, constraints=cons)
    fac = factorize(system) if opts.mode == "direct" else None

    def run(vals):
        g = system.lift(nodes, vals)
        rhs = system.rhs_for(g)
        if fac is not None:
            z, st = fac.solve(rhs)
        else:
            z, st = solve_spd(system, opts.tol, opts.max_iter, opts.precond, "cg", rhs=rhs)
        return VectorField(mesh, system.P @ z + g), st

    v, stats = {}, []
    zero_o = np.zeros((len(outer), 2))
    for i, di in ((1, d1), (2, d2)):
        for a in (1, 2, 3):
            vals = [zero_o, np.zeros((len(d1), 2)), np.zeros((len(d2), 2))]
            vals[i] = rigid_basis(a, mesh.nodes[di])
            v[(i, a)], st = run(np.vstack(vals))
            stats.append(st)
    v3, st = run(np.vstack([_eval_phi(phi, mesh.nodes[outer]), np.zeros((len(d1) + len(d2), 2))]))
    stats.append(st)
    return DecompositionSet(mesh, v, v3, stats)


def reconstruct(dec: DecompositionSet, C: RigidCoefficients) -> VectorField:
    vals = dec.v3.values.copy()
    for i in (1, 2):
        for a in (1, 2, 3):
            f = dec.v[(i, a)]
            if f.mesh is not dec.mesh:
                raise ValueError("decomposition fields live on different meshes")
            vals += C.C[i - 1, a - 1] * f.values
    return VectorField(dec.mesh, vals)


# -- norms ---------------------------------------------------------------------------------


def _mass_quad(mesh, vals, tris):
    """Exact integral of |v|^2 for a P1 field on the listed triangles."""
    V = vals[mesh.triangles[tris]]  # (T, 3, 2)
    s = (V * V).sum(axis=(1, 2)) + (V[:, 0] * V[:, 1] + V[:, 1] * V[:, 2] + V[:, 2] * V[:, 0]).sum(axis=1)
    return float(np.sum(mesh.areas[tris] * s / 6.0))


def h1_norm(u: VectorField, regions=(Region.MATRIX, Region.INCL1, Region.INCL2)):
    mesh = u.mesh
    tris = mesh.tris_in(regions)
    G = u.gradients(tris)
    l2 = _mass_quad(mesh, u.values, tris)
    h1s = float(np.sum(mesh.areas[tris] * (G * G).sum(axis=(1, 2))))
    return math.sqrt(l2 + h1s)


def h1_distance(u: VectorField, v: VectorField, relative=False,
                regions=(Region.MATRIX, Region.INCL1, Region.INCL2)):
    d = h1_norm(u - v, regions)
    if relative:
        nv = h1_norm(v, regions)
        return d / nv if nv > 0 else d
    return d


# -- convergence study ------------------------------------------------------------------------


@dataclass
class ConvergenceRow:
    n: int
    lambda_n: float
    mu_n: float
    h1_dist: float
    I_n: float
    I_inf: float


@dataclass
class ConvergenceTable:
    rows: list

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("n,lambda_n,mu_n,h1_dist,I_n,I_inf\n")
            for r in self.rows:
                fh.write(f"{r.n},{r.lambda_n:.17g},{r.mu_n:.17g},{r.h1_dist:.17g},{r.I_n:.17g},{r.I_inf:.17g}\n")


def check_ladder(ladder):
    keys = [min(mu, lam + mu) for lam, mu in ladder]
    if not ladder:
        raise ValueError("stiffness ladder is empty")
    if any(b <= a for a, b in zip(keys, keys[1:])):
        raise ValueError("stiffness ladder must be strictly increasing in min(mu_n, lambda_n + mu_n)")


def convergence_study(mesh: Mesh, geom, c: ElasticConstants, ladder, phi,
                      opts: SolverOptions = SolverOptions(), limit: LimitSolution | None = None,
                      index_start=1) -> ConvergenceTable:
    """Finite problems with inclusion constants from ``ladder`` against the limit solution."""
    check_ladder(ladder)
    lim = limit if limit is not None else solve_limit(mesh, geom, c, phi, opts)
    rows = []
    for k, (lam_n, mu_n) in enumerate(ladder):
        cn = ElasticConstants(c.lam, c.mu, lam_n, mu_n)
        un = solve_finite(mesh, geom, cn, phi, opts)
        rows.append(ConvergenceRow(index_start + k, float(lam_n), float(mu_n), h1_distance(un, lim.field),
                                   finite_energy(mesh, un, cn), lim.energy))
    return ConvergenceTable(rows)


# -- manufactured solution --------------------------------------------------------------------


def harmonic_gradient_field(scale=0.3, k=0.5):
    """u = scale * grad(exp(k x1) cos(k x2)): divergence free and harmonic, so L u = 0
    for every Lame pair.  Returns (value, gradient) callables."""

    def value(x):
        e = np.exp(k * x[:, 0])
        return scale * k * np.stack([e * np.cos(k * x[:, 1]), -e * np.sin(k * x[:, 1])], axis=-1)

    def gradient(x):
        e = np.exp(k * x[:, 0])
        cs, sn = np.cos(k * x[:, 1]), np.sin(k * x[:, 1])
        a = scale * k * k * e
        return np.stack([np.stack([a * cs, -a * sn], -1), np.stack([-a * sn, -a * cs], -1)], axis=-2)

    return value, gradient


def manufactured_traction_tolerance(mesh: Mesh, c: ElasticConstants, opts: SolverOptions = SolverOptions()):
    """Traction discretisation residual of a manufactured run on the matrix of ``mesh``.

    Solves the Dirichlet problem with exact data on every matrix boundary node and
    compares the edge-quadrature tractions against the exact ones, normalised by the
    sup of the data on the outer boundary.
    """
    val, grad = harmonic_gradient_field()
    cm = ElasticConstants(c.lam, c.mu)
    bnd = np.concatenate([mesh.boundary_nodes(t) for t in BoundaryTag])
    cons = ConstraintSpec(bnd, val(mesh.nodes[bnd]), (), (Region.MATRIX,))
    system = assemble(mesh, cm, constraints=cons)
    z, _ = _solve(system, opts)
    uh = VectorField(mesh, system.expand(z))
    exact = VectorField(mesh, val(mesh.nodes))
    # the exact field's stress is evaluated per triangle at the centroid
    exact._grads = grad(mesh.centroids())
    diff = edge_tractions(mesh, uh, cm) - edge_tractions(mesh, exact, cm)
    scale = np.abs(val(mesh.nodes[mesh.boundary_nodes(BoundaryTag.OUTER)])).max()
    return float(np.abs(diff).max() / scale)


def inclusion_gradient_error(sol: LimitSolution):
    """max over inclusion triangles of |grad u - C_i^3 ROT|."""
    mesh = sol.field.mesh
    err = 0.0
    for i, reg in ((1, Region.INCL1), (2, Region.INCL2)):
        tris = mesh.tris_in(reg)
        G = sol.field.gradients(tris)
        err = max(err, float(np.abs(G - sol.coeffs.get(i, 3) * ROT).max(initial=0.0)))
    return err


def manufactured_h1_error(mesh: Mesh, c: ElasticConstants, opts: SolverOptions = SolverOptions()):
    """Relative H1-seminorm error of the P1 solution of the homogeneous problem (inclusions
    made of the matrix material) with the harmonic field as exact solution and trace.

    The exact gradient is sampled at edge midpoints (exact for quadratics), so the
    measured error is not the superconvergent centroid error."""
    val, grad = harmonic_gradient_field()
    ch = ElasticConstants(c.lam, c.mu, c.lam, c.mu)
    uh = solve_finite(mesh, None, ch, val, opts)
    G = uh.gradients()
    T = mesh.nodes[mesh.triangles]
    num = den = 0.0
    for a, b in ((0, 1), (1, 2), (2, 0)):
        Ge = grad(0.5 * (T[:, a] + T[:, b]))
        num += float(np.sum(mesh.areas * ((G - Ge) ** 2).sum(axis=(1, 2))))
        den += float(np.sum(mesh.areas * (Ge**2).sum(axis=(1, 2))))
    return math.sqrt(num / den)


def manufactured_rate(mesh: Mesh, c: ElasticConstants, opts: SolverOptions = SolverOptions(), refine=None):
    """(error on mesh, error after one uniform refinement, ratio)."""
    from .meshgen import refine_uniform

    fine = (refine or refine_uniform)(mesh)
    e0 = manufactured_h1_error(mesh, c, opts)
    e1 = manufactured_h1_error(fine, c, opts)
    return e0, e1, e0 / e1
