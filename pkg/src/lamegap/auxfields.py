"""Closed-form auxiliary fields of the narrow region and the residuals w = v - ubar.

Inside the window ``Omega_R = {|x1| < R, between the graphs}``

    ubar = (x2 - h2(x1) + eps/2) / (eps + h1(x1) - h2(x1)),     uunder = 1 - ubar.

Elsewhere a C2 extension is used:

    ubar = w(x1) * rational + (1 - w(x1)) * o(x) * d2 / (d1 + d2)

where ``w`` is a quintic cutoff equal to 1 on |x1| <= R and 0 on |x1| >= 2R (applied
only between the graphs), ``d_i`` is the distance to D_i and ``o`` a quintic cutoff
vanishing on the outer circle.  The extension has the required traces: 1 on D1,
0 on D2 and on the outer boundary.  ``uunder`` uses d1/(d1 + d2) instead.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .elasticity import AnalyticField, ElasticConstants, VectorField, lame_apply
from .geometry import GapGeometry, GeometryDomainError, smoothstep5
from .meshgen import BoundaryTag, Region

__all__ = [
    "Which",
    "ubar_eval",
    "aux_field_eval",
    "aux_field_hessian",
    "lame_of_aux",
    "aux_analytic",
    "ResidualReport",
    "residual_analysis",
    "in_window",
    "RESIDUAL_HEADER",
]

RESIDUAL_HEADER = "epsilon,field,total_energy,sup_grad,window_z1,window_energy"


class Which(str, enum.Enum):
    BAR = "bar"
    UNDER = "under"


def in_window(geom: GapGeometry, pts, tol=1e-12):
    """Points in the closed narrow window |x1| <= R between the two graphs."""
    pts = np.atleast_2d(pts)
    return geom.in_strip(pts, geom.R_local * (1 + 1e-14), tol=tol)


def _rational(geom, pts, which):
    """Exact window formula with gradient and Hessian (shapes (n,), (n,2), (n,2,2))."""
    x1, x2 = pts[:, 0], pts[:, 1]
    eps = geom.epsilon
    (h1, d1, dd1), (h2, d2, dd2) = geom.heights(x1)
    D = eps + h1 - h2
    Dp = d1 - d2
    Dpp = dd1 - dd2
    if which is Which.BAR:
        N, Np, Npp = x2 - h2 + 0.5 * eps, -d2, -dd2
        sgn = 1.0
    else:
        N, Np, Npp = -x2 + h1 + 0.5 * eps, d1, dd1
        sgn = -1.0
    u = N / D
    u1 = (Np * D - N * Dp) / D**2
    u2 = sgn / D
    # d/dx1 of u1
    u11 = (Npp * D - N * Dpp) / D**2 - 2.0 * Dp * (Np * D - N * Dp) / D**3
    u12 = -sgn * Dp / D**2
    grad = np.stack([u1, u2], axis=-1)
    hess = np.stack([np.stack([u11, u12], -1), np.stack([u12, np.zeros_like(u)], -1)], axis=-2)
    return u, grad, hess


def _distance_parts(geom, pts, i):
    """Distance to D_i with gradient and Hessian (outside D_i)."""
    d, n, kappa = geom.signed_distance(i, pts)
    t = np.stack([-n[:, 1], n[:, 0]], axis=-1)
    coef = kappa / (1.0 + kappa * d)
    H = coef[:, None, None] * t[:, :, None] * t[:, None, :]
    return d, n, H


def _extension(geom, pts, which):
    d1, g1, H1 = _distance_parts(geom, pts, 1)
    d2, g2, H2 = _distance_parts(geom, pts, 2)
    d1 = np.maximum(d1, 0.0)
    d2 = np.maximum(d2, 0.0)
    S = d1 + d2
    gS = g1 + g2
    HS = H1 + H2
    if which is Which.BAR:
        Nn, gN, HN = d2, g2, H2
    else:
        Nn, gN, HN = d1, g1, H1
    chi = Nn / S
    gchi = (gN - chi[:, None] * gS) / S[:, None]
    Hchi = (HN - chi[:, None, None] * HS
            - gchi[:, :, None] * gS[:, None, :] - gS[:, :, None] * gchi[:, None, :]) / S[:, None, None]
    # outer cutoff
    R0 = geom.outer_radius
    kap = 0.5 * (R0 - geom.max_inclusion_extent())
    r = np.hypot(pts[:, 0], pts[:, 1])
    s, ds, dds = smoothstep5((R0 - r) / kap)
    er = pts / np.maximum(r, 1e-300)[:, None]
    go = -(ds / kap)[:, None] * er
    Hr = (np.eye(2)[None] - er[:, :, None] * er[:, None, :]) / np.maximum(r, 1e-300)[:, None, None]
    Ho = (dds / kap**2)[:, None, None] * er[:, :, None] * er[:, None, :] - (ds / kap)[:, None, None] * Hr
    val = s * chi
    grad = s[:, None] * gchi + chi[:, None] * go
    hess = (s[:, None, None] * Hchi + chi[:, None, None] * Ho
            + go[:, :, None] * gchi[:, None, :] + gchi[:, :, None] * go[:, None, :])
    return val, grad, hess


def _check_domain(geom, pts):
    for i in (1, 2):
        d, _, _ = geom.signed_distance(i, pts)
        tol = 1e-9 * max(1.0, geom.outer_radius)
        if np.any(d < -tol):
            raise GeometryDomainError(f"point inside inclusion D{i}; ubar is defined on the matrix only")
    r = np.hypot(pts[:, 0], pts[:, 1])
    if np.any(r > geom.outer_radius * (1 + 1e-12)):
        raise GeometryDomainError("point outside the outer domain")


def ubar_eval(geom: GapGeometry, x, which=Which.BAR, check=True):
    """Value, gradient and Hessian of ubar (or uunder) at ``x`` ((2,) or (n, 2))."""
    which = Which(which)
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    n = len(pts)
    if check:
        _check_domain(geom, pts)
    val = np.empty(n)
    grad = np.empty((n, 2))
    hess = np.empty((n, 2, 2))
    R = geom.R_local
    strip = geom.in_strip(pts, 2 * R, tol=1e-12)
    core = strip & (np.abs(pts[:, 0]) <= R)
    rest = ~core
    if core.any():
        val[core], grad[core], hess[core] = _rational(geom, pts[core], which)
    if rest.any():
        ev, eg, eh = _extension(geom, pts[rest], which)
        blend = strip[rest]
        if blend.any():
            pb = pts[rest][blend]
            rv, rg, rh = _rational(geom, pb, which)
            ax = np.abs(pb[:, 0])
            s, ds, dds = smoothstep5((ax - R) / R)
            w = 1.0 - s
            sg = np.sign(pb[:, 0])
            w1 = -ds * sg / R
            w11 = -dds / R**2
            gw = np.stack([w1, np.zeros_like(w1)], -1)
            Hw = np.zeros((len(pb), 2, 2))
            Hw[:, 0, 0] = w11
            E, Eg, Eh = ev[blend], eg[blend], eh[blend]
            dv = rv - E
            dg = rg - Eg
            ev[blend] = E + w * dv
            eg[blend] = Eg + w[:, None] * dg + dv[:, None] * gw
            eh[blend] = (Eh + w[:, None, None] * (rh - Eh) + dv[:, None, None] * Hw
                         + gw[:, :, None] * dg[:, None, :] + dg[:, :, None] * gw[:, None, :])
        val[rest], grad[rest], hess[rest] = ev, eg, eh
    if x.ndim == 1:
        return float(val[0]), grad[0], hess[0]
    return val, grad, hess


def _which_for(i):
    if i not in (1, 2):
        raise ValueError("inclusion index must be 1 or 2")
    return Which.BAR if i == 1 else Which.UNDER


def _compose(pts, alpha, u, g, H):
    """Vector field built from the scalar u for rigid mode alpha: value, gradient, Hessian."""
    n = len(pts)
    V = np.zeros((n, 2))
    G = np.zeros((n, 2, 2))
    HH = np.zeros((n, 2, 2, 2))
    if alpha == 1:
        V[:, 0], G[:, 0], HH[:, 0] = u, g, H
    elif alpha == 2:
        V[:, 1], G[:, 1], HH[:, 1] = u, g, H
    elif alpha == 3:
        x1, x2 = pts[:, 0], pts[:, 1]
        V[:, 0] = x2 * u
        V[:, 1] = -x1 * u
        e1 = np.array([1.0, 0.0])
        e2 = np.array([0.0, 1.0])
        G[:, 0] = x2[:, None] * g + u[:, None] * e2
        G[:, 1] = -(x1[:, None] * g + u[:, None] * e1)
        HH[:, 0] = (x2[:, None, None] * H + e2[None, :, None] * g[:, None, :]
                    + g[:, :, None] * e2[None, None, :])
        HH[:, 1] = -(x1[:, None, None] * H + e1[None, :, None] * g[:, None, :]
                     + g[:, :, None] * e1[None, None, :])
    else:
        raise ValueError("rigid mode index must be 1, 2 or 3")
    return V, G, HH


def aux_field_hessian(geom, i, alpha, x, check=True):
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    u, g, H = ubar_eval(geom, pts, _which_for(i), check=check)
    V, G, HH = _compose(pts, alpha, np.atleast_1d(u), np.atleast_2d(g), H.reshape(-1, 2, 2))
    if x.ndim == 1:
        return V[0], G[0], HH[0]
    return V, G, HH


def aux_field_eval(geom: GapGeometry, i, alpha, x, check=True):
    """ubar_i^alpha and its gradient ``[comp, dir]``: (ubar,0), (0,ubar), (x2 ubar, -x1 ubar)
    for i = 1; i = 2 uses uunder."""
    V, G, _ = aux_field_hessian(geom, i, alpha, x, check)
    return V, G


def aux_analytic(geom, i, alpha):
    return AnalyticField(lambda x: aux_field_hessian(geom, i, alpha, x)[0],
                         lambda x: aux_field_hessian(geom, i, alpha, x)[1],
                         lambda x: aux_field_hessian(geom, i, alpha, x)[2])


def lame_of_aux(geom: GapGeometry, c: ElasticConstants, i, alpha, x):
    """L_{lam,mu} ubar_i^alpha at points of the open window."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    if not np.all(in_window(geom, pts, tol=0.0) & (np.abs(pts[:, 0]) < geom.R_local)):
        raise GeometryDomainError("lame_of_aux is only evaluated inside the window Omega_R")
    out = lame_apply(aux_analytic(geom, i, alpha), pts, c)
    return out[0] if x.ndim == 1 else out


# -- residuals --------------------------------------------------------------------------


@dataclass
class ResidualRow:
    field: str
    total_energy: float
    sup_grad: float
    window_z1: float
    window_energy: float


@dataclass
class ResidualReport:
    epsilon: float
    rows: list
    trace_error: float
    v_sup_grad: dict

    def total(self, name):
        return next(r.total_energy for r in self.rows if r.field == name)

    def sup(self, name):
        return next(r.sup_grad for r in self.rows if r.field == name)

    def window(self, name, z1):
        return next(r.window_energy for r in self.rows if r.field == name and r.window_z1 == z1)

    def csv_lines(self):
        return [f"{self.epsilon:.17g},{r.field},{r.total_energy:.17g},{r.sup_grad:.17g},"
                f"{r.window_z1:.17g},{r.window_energy:.17g}" for r in self.rows]


def interpolate_aux(mesh, geom, i, alpha, scalar=None):
    """Nodal interpolant of ubar_i^alpha; nodes of D_i get psi^alpha, nodes of the other
    inclusion get 0.  ``scalar`` may carry precomputed ubar/uunder values at all nodes."""
    from .elasticity import rigid_basis

    if scalar is None:
        scalar = aux_scalar_at_nodes(mesh, geom, _which_for(i))
    x = mesh.nodes
    if alpha == 1:
        vals = np.stack([scalar, np.zeros_like(scalar)], -1)
    elif alpha == 2:
        vals = np.stack([np.zeros_like(scalar), scalar], -1)
    else:
        vals = np.stack([x[:, 1] * scalar, -x[:, 0] * scalar], -1)
    own = mesh.inclusion_nodes(i)
    vals[own] = rigid_basis(alpha, x[own])
    vals[mesh.inclusion_nodes(3 - i)] = 0.0
    return VectorField(mesh, vals)


def aux_scalar_at_nodes(mesh, geom, which):
    """ubar (or uunder) at every matrix node, zero elsewhere."""
    out = np.zeros(mesh.n_nodes)
    mn = np.flatnonzero(mesh.node_region < 0)
    vals, _, _ = ubar_eval(geom, mesh.nodes[mn], which, check=False)
    out[mn] = vals
    return out


def residual_analysis(dec, geom: GapGeometry, c: ElasticConstants | None = None, z1_grid=None):
    """Energies and sup norms of w_i^alpha = v_i^alpha - I_h ubar_i^alpha on the matrix.

    Window energies are integrals of |grad w|^2 over {|x1 - z1| < delta(z1)} between the
    graphs, with triangles selected by centroid.
    """
    mesh = dec.mesh
    tris = mesh.tris_in(Region.MATRIX)
    area = mesh.areas[tris]
    cen = mesh.centroids(tris)
    if z1_grid is None:
        z1_grid = (0.0, 0.5 * geom.R_local)
    from .geometry import delta

    wins = []
    strip = geom.in_strip(cen, 2 * geom.R_local)
    for z in z1_grid:
        dz = delta(geom, z)
        wins.append((z, strip & (np.abs(cen[:, 0] - z) < dz)))
    rows, vsup = [], {}
    trace = 0.0
    bnd = np.concatenate([mesh.boundary_nodes(t) for t in BoundaryTag])
    scalars = {i: aux_scalar_at_nodes(mesh, geom, _which_for(i)) for i in (1, 2)}
    for i in (1, 2):
        for a in (1, 2, 3):
            v = dec.v[(i, a)]
            ub = interpolate_aux(mesh, geom, i, a, scalars[i])
            w = VectorField(mesh, v.values - ub.values)
            trace = max(trace, float(np.abs(w.values[bnd]).max()))
            G = w.gradients(tris)
            dens = (G * G).sum(axis=(1, 2))
            tot = float(np.sum(area * dens))
            sup = float(np.sqrt(dens.max()))
            name = f"w{i}{a}"
            vsup[f"v{i}{a}"] = float(v.grad_norms(tris).max())
            for z, sel in wins:
                rows.append(ResidualRow(name, tot, sup, float(z), float(np.sum(area[sel] * dens[sel]))))
    return ResidualReport(float(geom.epsilon), rows, trace, vsup)
