"""Global stiffness assembly with Dirichlet elimination and rigid condensation, and SPD solves.

The unknown vector of a :class:`SparseSystem` is ``z = (free nodal dofs, rigid dofs)``.
Full nodal displacements are recovered as ``u = P z + g`` where ``P`` is the
prolongation (identity on free dofs, rigid modes on condensed nodes) and ``g``
carries the Dirichlet values.  The reduced matrix is ``P^T K P``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .elasticity import ElasticConstants, _region_material
from .meshgen import Mesh, Region, _as_region_set

__all__ = [
    "ConstraintSpec",
    "SparseSystem",
    "AssemblyError",
    "ConvergenceError",
    "SolveStats",
    "SolverOptions",
    "stiffness_matrix",
    "assemble",
    "solve_spd",
    "Factorization",
    "factorize",
    "write_coo",
]


class AssemblyError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, msg, best, history):
        super().__init__(msg)
        self.best = best
        self.history = history


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 20000
    mode: str = "direct"  # or "cg"
    precond: str = "jacobi"  # or "ilu"

    def __post_init__(self):
        if self.mode not in ("direct", "cg"):
            raise ValueError(f"solver mode must be 'direct' or 'cg' (got {self.mode!r})")
        if self.precond not in ("jacobi", "ilu"):
            raise ValueError(f"preconditioner must be 'jacobi' or 'ilu' (got {self.precond!r})")
        if not 0 < self.tol <= 1e-6:
            raise ValueError(f"tol must lie in (0, 1e-6] (got {self.tol})")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class ConstraintSpec:
    """Dirichlet nodes with values, and node groups condensed onto rigid motions."""

    dirichlet_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    rigid_groups: tuple = ()
    regions: tuple = (Region.MATRIX,)


@dataclass
class SparseSystem:
    A: sp.csr_matrix
    rhs: np.ndarray
    K: sp.csr_matrix
    P: sp.csr_matrix
    g: np.ndarray
    n_free_nodal: int
    rigid_offset: int
    n_rigid: int
    free_nodes: np.ndarray
    mesh: Mesh = field(repr=False)

    @property
    def dim(self):
        return self.A.shape[0]

    def expand(self, z):
        return self.P @ z + self.g

    def rhs_for(self, g):
        """Right-hand side for the same constraint pattern with new Dirichlet lift ``g``."""
        return -(self.P.T @ (self.K @ g))

    def lift(self, nodes, values):
        g = np.zeros(2 * self.mesh.n_nodes)
        nodes = np.asarray(nodes, dtype=int)
        g[2 * nodes] = values[:, 0]
        g[2 * nodes + 1] = values[:, 1]
        return g

    def rigid_dofs(self, z):
        return z[self.rigid_offset:self.rigid_offset + 3 * self.n_rigid].reshape(self.n_rigid, 3)


def stiffness_matrix(mesh: Mesh, c: ElasticConstants, regions=(Region.MATRIX,), material_map=None):
    """Global 2N x 2N P1 stiffness over the triangles of ``regions``.

    ``material_map`` (region -> (lam, mu)) overrides the constants from ``c``.
    """
    tris = mesh.tris_in(_as_region_set(regions))
    b, cc, area = mesh.geometry_arrays
    lam, mu = _region_material(mesh, c, tris)
    if material_map:
        for r, (lr, mr) in material_map.items():
            sel = mesh.region[tris] == int(r)
            lam[sel], mu[sel] = lr, mr
    ke = kernels.cst_stiffness(b[tris], cc[tris], area[tris], lam, mu)
    T = mesh.triangles[tris]
    dof = np.stack([2 * T, 2 * T + 1], axis=2).reshape(len(T), 6)
    rows = np.repeat(dof, 6, axis=1).ravel()
    cols = np.tile(dof, (1, 6)).ravel()
    n = 2 * mesh.n_nodes
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def assemble(mesh: Mesh, c: ElasticConstants, material_map=None, constraints: ConstraintSpec | None = None,
             K=None) -> SparseSystem:
    cons = constraints or ConstraintSpec()
    if K is None:
        K = stiffness_matrix(mesh, c, cons.regions, material_map)
    N = mesh.n_nodes
    dn = np.asarray(cons.dirichlet_nodes, dtype=int)
    dv = np.asarray(cons.dirichlet_values, dtype=float).reshape(-1, 2)
    if len(dn) != len(dv):
        raise AssemblyError("dirichlet_values must match dirichlet_nodes")
    if np.any((dn < 0) | (dn >= N)):
        raise AssemblyError("Dirichlet node index out of range")
    role = np.zeros(N, dtype=int)  # 0 free, 1 Dirichlet, 2+k rigid group k
    role[dn] = 1
    for k, grp in enumerate(cons.rigid_groups):
        grp = np.asarray(grp, dtype=int)
        if np.any(role[grp] == 1):
            raise AssemblyError(f"rigid group {k} contains Dirichlet nodes")
        if np.any(role[grp] >= 2):
            raise AssemblyError(f"rigid group {k} overlaps another rigid group")
        role[grp] = 2 + k
    used = np.zeros(N, dtype=bool)
    used[np.unique(mesh.triangles[mesh.tris_in(_as_region_set(cons.regions))])] = True
    free = np.flatnonzero((role == 0) & used)
    nf = len(free)
    nr = len(cons.rigid_groups)
    rows, cols, vals = [2 * free, 2 * free + 1], [2 * np.arange(nf), 2 * np.arange(nf) + 1], [np.ones(nf)] * 2
    off = 2 * nf
    for k, grp in enumerate(cons.rigid_groups):
        grp = np.asarray(grp, dtype=int)
        x = mesh.nodes[grp]
        one = np.ones(len(grp))
        o = off + 3 * k
        rows += [2 * grp, 2 * grp + 1, 2 * grp, 2 * grp + 1]
        cols += [np.full(len(grp), o), np.full(len(grp), o + 1), np.full(len(grp), o + 2), np.full(len(grp), o + 2)]
        vals += [one, one, x[:, 1], -x[:, 0]]
    P = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(2 * N, off + 3 * nr))
    g = np.zeros(2 * N)
    g[2 * dn] = dv[:, 0]
    g[2 * dn + 1] = dv[:, 1]
    A = (P.T @ K @ P).tocsr()
    A = ((A + A.T) * 0.5).tocsr()
    A.sort_indices()
    rhs = -(P.T @ (K @ g))
    return SparseSystem(A, rhs, K, P, g, nf, off, nr, free, mesh)


# -- solves ---------------------------------------------------------------------------


@dataclass
class SolveStats:
    mode: str
    iterations: int
    residual: float
    seconds: float
    min_pivot: float = float("nan")
    history: list = field(default_factory=list, repr=False)


def _pcg(A, b, tol, max_iter, M, x0=None):
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0, [0.0]
    r = b - A @ x
    z = M(r)
    p = z.copy()
    rz = r @ z
    hist = [np.linalg.norm(r) / bnorm]
    best, best_res = x.copy(), hist[0]
    it = 0
    while hist[-1] > tol and it < max_iter:
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        res = np.linalg.norm(r) / bnorm
        hist.append(res)
        if res < best_res:
            best, best_res = x.copy(), res
        if res <= tol:
            break
        z = M(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    true_res = np.linalg.norm(b - A @ x) / bnorm
    if true_res > tol:
        raise ConvergenceError(
            f"PCG did not reach tol={tol:g} in {max_iter} iterations (residual {best_res:.3e}); "
            "the gap system is ill-conditioned, use solver mode 'direct'", best, hist)
    return x, it, true_res, hist


class Factorization:
    """SuperLU factorisation in symmetric mode (diagonal pivots), reusable for many RHS."""

    def __init__(self, A):
        t0 = time.perf_counter()
        self.lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options=dict(SymmetricMode=True))
        d = self.lu.U.diagonal()
        self.min_pivot = float(d.min()) if len(d) else float("inf")
        if len(d) and self.min_pivot <= 0:
            raise np.linalg.LinAlgError(f"matrix is not positive definite (pivot {self.min_pivot:.3e})")
        self.seconds = time.perf_counter() - t0
        self.A = A

    def solve(self, b):
        t0 = time.perf_counter()
        x = self.lu.solve(b) if len(b) else np.zeros(0)
        bn = np.linalg.norm(b)
        res = float(np.linalg.norm(self.A @ x - b) / bn) if bn > 0 else 0.0
        return x, SolveStats("direct", 1, res, time.perf_counter() - t0 + self.seconds, self.min_pivot)


def factorize(system_or_matrix):
    A = system_or_matrix.A if isinstance(system_or_matrix, SparseSystem) else system_or_matrix
    return Factorization(A)


def solve_spd(system, tol=1e-10, max_iter=20000, precond="jacobi", mode="cg", x0=None, rhs=None):
    """Solve ``A x = b`` for an assembled system or a bare sparse matrix (then pass ``rhs``).

    ``mode='cg'`` runs preconditioned CG (Jacobi or incomplete LU); ``mode='direct'``
    uses the SuperLU factorisation.  Returns ``(x, SolveStats)``.
    """
    SolverOptions(tol=tol, max_iter=max_iter, mode=mode, precond=precond)
    if isinstance(system, SparseSystem):
        A, b = system.A, system.rhs if rhs is None else rhs
    else:
        A, b = sp.csr_matrix(system), np.asarray(rhs, dtype=float)
    if A.shape[0] == 0:
        return np.zeros(0), SolveStats(mode, 0, 0.0, 0.0)
    if mode == "direct":
        x, st = Factorization(A).solve(b)
        if st.residual > tol:
            raise ConvergenceError(f"direct solve residual {st.residual:.3e} exceeds tol", x, [st.residual])
        return x, st
    t0 = time.perf_counter()
    if precond == "jacobi":
        dinv = 1.0 / A.diagonal()
        M = lambda r: dinv * r  # noqa: E731
    else:
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20)
        M = ilu.solve
    x, it, res, hist = _pcg(A, b, tol, max_iter, M, x0)
    return x, SolveStats("cg", it, float(res), time.perf_counter() - t0, history=hist)


def write_coo(A, path):
    C = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i} {j} {v:.17g}\n")
