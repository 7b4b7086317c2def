"""Conforming triangulations of the outer disk with both inclusions, graded into the gap.

Meshing is delegated to Shewchuk's Triangle (``triangle`` package).  Boundaries
are discretised up front with points lying exactly on the analytic curves, and
Triangle is told never to split them (``YY``), so every boundary node is on the
curve to round-off.  Element sizes come from a Lipschitz size function anchored
on the inclusion boundaries: the gap-facing side asks for ``delta(x1)/h_gap``
and the size grows linearly (rate ``grade``) away from it up to ``h_far``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import triangle as tr

from . import kernels
from .geometry import GapGeometry

__all__ = [
    "Region",
    "BoundaryTag",
    "Mesh",
    "MeshError",
    "MeshInvariantError",
    "QualityReport",
    "build_mesh",
    "mesh_quality",
    "check_mesh",
    "refine_uniform",
    "write_mesh",
    "read_mesh",
]

MIN_ANGLE_DEG = 15.0
EPS_FLOOR = 1e-5
TOL_GEO = 1e-10
BUILD_FACTOR = 0.8  # target sizes are built at 80% of the law, leaving headroom


class Region(enum.IntEnum):
    MATRIX = 0
    INCL1 = 1
    INCL2 = 2


class BoundaryTag(enum.IntEnum):
    OUTER = 0
    GAMMA1 = 1
    GAMMA2 = 2


_MARKER_OF = {BoundaryTag.OUTER: 2, BoundaryTag.GAMMA1: 3, BoundaryTag.GAMMA2: 4}
_TAG_OF = {v: k for k, v in _MARKER_OF.items()}


class MeshError(ValueError):
    """Refused mesh request (bad parameters)."""


class MeshInvariantError(RuntimeError):
    """A built or loaded mesh violates a structural invariant."""

    def __init__(self, check, detail):
        super().__init__(f"mesh invariant '{check}' failed: {detail}")
        self.check = check


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    region: np.ndarray
    boundary_edges: np.ndarray
    boundary_tag: np.ndarray
    h_gap: int = 0
    h_far: float = 0.0
    geom: GapGeometry | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("nodes", "triangles", "region", "boundary_edges", "boundary_tag"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def tris_in(self, regions):
        regions = _as_region_set(regions)
        return np.flatnonzero(np.isin(self.region, list(regions)))

    @cached_property
    def geometry_arrays(self):
        """Per-triangle shape gradients ``b = d/dx1``, ``c = d/dx2`` and areas."""
        b, c, a = kernels.element_gradients(self.nodes, self.triangles)
        for arr in (b, c, a):
            arr.setflags(write=False)
        return b, c, a

    @property
    def areas(self):
        return self.geometry_arrays[2]

    def boundary_nodes(self, tag):
        return np.unique(self.boundary_edges[self.boundary_tag == int(tag)])

    @cached_property
    def node_region(self):
        """-1 for matrix-only nodes, otherwise the inclusion (1 or 2) containing it.

        Nodes on an inclusion boundary count as belonging to that inclusion.
        """
        out = np.full(self.n_nodes, -1, dtype=int)
        for k in (Region.INCL1, Region.INCL2):
            out[np.unique(self.triangles[self.region == k])] = int(k)
        for k, tag in ((1, BoundaryTag.GAMMA1), (2, BoundaryTag.GAMMA2)):
            out[self.boundary_nodes(tag)] = k
        out.setflags(write=False)
        return out

    def inclusion_nodes(self, i):
        return np.flatnonzero(self.node_region == i)

    def matrix_nodes(self):
        return np.unique(self.triangles[self.region == Region.MATRIX])

    def centroids(self, tris=None):
        T = self.triangles if tris is None else self.triangles[tris]
        return self.nodes[T].mean(axis=1)

    def fingerprint(self):
        import hashlib

        h = hashlib.sha256()
        for arr in (self.nodes, self.triangles, self.region, self.boundary_edges, self.boundary_tag):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _as_region_set(regions):
    if isinstance(regions, (int, np.integer, Region)):
        return {int(regions)}
    return {int(r) for r in regions}


@dataclass
class QualityReport:
    min_angle: float
    max_angle: float
    min_area: float
    n_nodes: int
    n_triangles: int
    gap_layers: int
    edge_counts: dict
    euler_matrix: int
    conforming: bool
    window_nodes: int = 0

    def as_dict(self):
        return dict(self.__dict__)


# -- quality ----------------------------------------------------------------------


def triangle_angles(nodes, tris):
    P = nodes[tris]
    out = np.empty((len(tris), 3))
    for k in range(3):
        u = P[:, (k + 1) % 3] - P[:, k]
        w = P[:, (k + 2) % 3] - P[:, k]
        cosv = (u * w).sum(1) / (np.hypot(u[:, 0], u[:, 1]) * np.hypot(w[:, 0], w[:, 1]))
        out[:, k] = np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0)))
    return out


def _edges(tris):
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts


def fiber_layers(nodes, tris, x1=0.0, y_lo=None, y_hi=None):
    """Number of triangles crossed (with positive length) by the vertical line at ``x1``
    between ``y_lo`` and ``y_hi``."""
    P = nodes[tris]
    xs = P[:, :, 0]
    lo = xs.min(1) < x1
    hi = xs.max(1) > x1
    cand = np.flatnonzero(lo & hi)
    count = 0
    for t in cand:
        ys = []
        for k in range(3):
            a, b = P[t, k], P[t, (k + 1) % 3]
            if (a[0] - x1) * (b[0] - x1) < 0:
                s = (x1 - a[0]) / (b[0] - a[0])
                ys.append(a[1] + s * (b[1] - a[1]))
            elif a[0] == x1:
                ys.append(a[1])
        if len(ys) < 2:
            continue
        y0, y1 = min(ys), max(ys)
        if y_lo is not None:
            y0 = max(y0, y_lo)
        if y_hi is not None:
            y1 = min(y1, y_hi)
        if y1 - y0 > 1e-14 * max(1.0, abs(y1)):
            count += 1
    return count


def mesh_quality(mesh: Mesh) -> QualityReport:
    """Angle/area statistics, gap layer count and edge/region bookkeeping."""
    nodes, tris = mesh.nodes, mesh.triangles
    ang = triangle_angles(nodes, tris)
    P = nodes[tris]
    area2 = ((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1])
             - (P[:, 2, 0] - P[:, 0, 0]) * (P[:, 1, 1] - P[:, 0, 1]))
    _, counts = _edges(tris)
    conforming = bool(np.all(counts <= 2))
    mt = tris[mesh.region == Region.MATRIX]
    if len(mt):
        medges, _ = _edges(mt)
        euler = len(np.unique(mt)) - len(medges) + len(mt)
    else:
        euler = 0
    layers = 0
    window = 0
    if mesh.geom is not None and len(mt):
        eps = mesh.geom.epsilon
        layers = fiber_layers(nodes, mt, 0.0, -eps / 2, eps / 2)
        mn = mesh.matrix_nodes()
        window = int(mesh.geom.in_strip(nodes[mn], mesh.geom.R_local, tol=1e-12).sum())
    edge_counts = {t.name: int((mesh.boundary_tag == int(t)).sum()) for t in BoundaryTag}
    return QualityReport(
        min_angle=float(ang.min()),
        max_angle=float(ang.max()),
        min_area=float(0.5 * area2.min()),
        n_nodes=mesh.n_nodes,
        n_triangles=mesh.n_triangles,
        gap_layers=int(layers),
        edge_counts=edge_counts,
        euler_matrix=int(euler),
        conforming=conforming,
        window_nodes=window,
    )


def check_mesh(mesh: Mesh, min_angle=MIN_ANGLE_DEG, h_gap=None) -> QualityReport:
    """Raise :class:`MeshInvariantError` naming the first failed check."""
    rep = mesh_quality(mesh)
    if rep.min_area <= 0:
        raise MeshInvariantError("positive_area", f"min signed area {rep.min_area:.3e}")
    if not rep.conforming:
        raise MeshInvariantError("conforming", "an edge is shared by more than two triangles")
    if rep.min_angle < min_angle:
        raise MeshInvariantError("min_angle", f"{rep.min_angle:.2f} deg < {min_angle} deg")
    _, counts = _edges(mesh.triangles)
    n_bnd = int((counts == 1).sum())
    n_outer = rep.edge_counts["OUTER"]
    if n_bnd != n_outer:
        raise MeshInvariantError("conforming", f"{n_bnd} free edges but {n_outer} OUTER edges")
    if mesh.geom is not None:
        g = mesh.geom
        if rep.euler_matrix != -1:
            raise MeshInvariantError("euler", f"V-E+F on MATRIX = {rep.euler_matrix}, expected -1")
        tol = TOL_GEO * g.outer_radius
        for i, tag in ((1, BoundaryTag.GAMMA1), (2, BoundaryTag.GAMMA2)):
            nd = mesh.boundary_nodes(tag)
            d, _, _ = g.signed_distance(i, mesh.nodes[nd])
            if np.abs(d).max() > tol:
                raise MeshInvariantError("boundary_snap", f"GAMMA{i} node off curve by {np.abs(d).max():.2e}")
        nd = mesh.boundary_nodes(BoundaryTag.OUTER)
        off = np.abs(np.hypot(*mesh.nodes[nd].T) - g.outer_radius).max()
        if off > tol:
            raise MeshInvariantError("boundary_snap", f"OUTER node off circle by {off:.2e}")
        need = mesh.h_gap if h_gap is None else h_gap
        if need:
            mt = mesh.triangles[mesh.region == Region.MATRIX]
            ok = _window_sizes_ok(g, mesh.nodes, mt, need)
            if not ok.all():
                raise MeshInvariantError("grading", f"{int((~ok).sum())} gap-window elements exceed the size law")
        if need and rep.gap_layers < need:
            raise MeshInvariantError("gap_layers", f"{rep.gap_layers} layers across the gap < {need}")
    return rep


# -- size field ---------------------------------------------------------------------


@dataclass(frozen=True)
class SizeField:
    samples: np.ndarray
    sizes: np.ndarray
    grade: float
    cap: float

    def __call__(self, pts):
        return kernels.size_field(pts, self.samples, self.sizes, self.grade, self.cap)


def gap_size_law(geom: GapGeometry, x1, h_gap):
    """Target diameter on the gap-facing boundary above ``x1``."""
    x1 = np.asarray(x1, dtype=float)
    d = geom.local_half_gap(np.clip(x1, -geom.graph_half_width, geom.graph_half_width))
    s_x2 = d / h_gap
    s_x1 = np.sqrt(geom.epsilon * np.maximum(geom.epsilon, np.abs(x1)))
    return np.minimum(s_x2, s_x1)


def make_size_field(geom: GapGeometry, h_gap, h_far, grade=0.25, n_samples=4000):
    th = np.linspace(0.0, 2.0 * np.pi, n_samples, endpoint=False)
    pts, sizes = [], []
    for i in (1, 2):
        shape = geom.shape(i)
        P, dP, ddP = shape.curve(th)
        speed = np.hypot(dP[:, 0], dP[:, 1])
        kappa = np.abs(dP[:, 0] * ddP[:, 1] - dP[:, 1] * ddP[:, 0]) / speed**3
        s = np.minimum(h_far, 0.3 / np.maximum(kappa, 1e-12))
        facing = (np.sin(th) < 0) & (np.abs(P[:, 0]) < 0.999 * geom.graph_half_width)
        s = np.where(facing, np.minimum(s, gap_size_law(geom, P[:, 0], h_gap)), s)
        pts.append(geom.from_canonical(i, P))
        sizes.append(s)
    return SizeField(np.vstack(pts), np.concatenate(sizes), grade, h_far)


def _discretise_curve(curve_pts, curve_speed, theta, size_fn, nmin=16):
    """Points on a closed curve equidistributing arc length / local size."""
    s = size_fn(curve_pts(theta))
    dens = curve_speed(theta) / s
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(theta))])
    n = max(nmin, int(math.ceil(cum[-1])))
    tt = np.interp(np.arange(n) * cum[-1] / n, cum, theta)
    return curve_pts(tt)


def build_mesh(geom: GapGeometry, h_gap: int = 8, h_far: float | None = None,
               grade: float = 0.25, min_angle: float = 25.0, max_rounds: int = 40) -> Mesh:
    """Graded conforming mesh of the outer disk with both inclusions meshed.

    Near the gap the target diameter is ``min(delta(x1)/h_gap, sqrt(eps*max(eps,|x1|)))``;
    elsewhere it grows at rate ``grade`` up to ``h_far``.  Elements are isotropic.
    """
    R0 = geom.outer_radius
    if h_far is None:
        h_far = R0 / 10
    if geom.epsilon < EPS_FLOOR * R0:
        raise MeshError(
            f"epsilon={geom.epsilon:g} is below the resolvable floor {EPS_FLOOR:g}*outer_radius; "
            "the gap cannot be resolved with a conforming isotropic mesh")
    if h_gap < 4:
        raise MeshError(f"h_gap must be >= 4 (got {h_gap})")
    if h_far > R0 / 8 + 1e-15:
        raise MeshError(f"h_far must be <= outer_radius/8 = {R0 / 8:g} (got {h_far:g})")
    law = make_size_field(geom, h_gap, h_far, grade)
    build = SizeField(law.samples, BUILD_FACTOR * law.sizes, grade, BUILD_FACTOR * h_far)
    theta = np.linspace(0.0, 2.0 * np.pi, 40001)[:-1]
    theta = np.append(theta, 2.0 * np.pi)

    def outer_pts(t):
        return R0 * np.stack([np.cos(t), np.sin(t)], axis=-1)

    loops = []
    q = _discretise_curve(outer_pts, lambda t: np.full_like(t, R0), theta, build)
    loops.append((q, BoundaryTag.OUTER))
    for i, tag in ((1, BoundaryTag.GAMMA1), (2, BoundaryTag.GAMMA2)):
        shape = geom.shape(i)

        def pts_i(t, i=i, shape=shape):
            return geom.from_canonical(i, shape.curve(t)[0])

        def speed_i(t, shape=shape):
            dP = shape.curve(t)[1]
            return np.hypot(dP[:, 0], dP[:, 1])

        loops.append((_discretise_curve(pts_i, speed_i, theta, build), tag))

    verts, segs, marks = [], [], []
    off = 0
    for q, tag in loops:
        n = len(q)
        verts.append(q)
        segs.append(off + np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1))
        marks.append(np.full(n, _MARKER_OF[tag]))
        off += n
    c1, c2 = geom.inclusion_centre(1), geom.inclusion_centre(2)
    pslg = dict(
        vertices=np.vstack(verts),
        segments=np.vstack(segs).astype(np.int32),
        segment_markers=np.concatenate(marks).astype(np.int32)[:, None],
        regions=np.array([[0.0, 0.0, Region.MATRIX, 0.0],
                          [c1[0], c1[1], Region.INCL1, 0.0],
                          [c2[0], c2[1], Region.INCL2, 0.0]]),
    )
    opts = f"pq{min_angle:g}YYA"
    m = tr.triangulate(pslg, opts)
    for _ in range(max_rounds):
        V, T = m["vertices"], m["triangles"]
        s = build(V[T].mean(axis=1))
        P = V[T]
        area = 0.5 * np.abs((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1])
                            - (P[:, 2, 0] - P[:, 0, 0]) * (P[:, 1, 1] - P[:, 0, 1]))
        target = math.sqrt(3.0) / 4.0 * s * s
        coarse = ~_window_sizes_ok(geom, V, T, h_gap)
        bad = (area > 1.5 * target) | coarse
        if not bad.any():
            break
        # window elements that meet the area target but not the extent law get halved
        target = np.where(coarse, np.minimum(target, 0.5 * area), target)
        m["triangle_max_area"] = np.where(bad, target, -1.0)
        m = tr.triangulate(m, f"rpq{min_angle:g}YYAa")
    else:
        raise MeshInvariantError("grading", f"size targets not met after {max_rounds} refinement rounds")
    mesh = _from_triangle(m, geom, h_gap, h_far)
    check_mesh(mesh)
    return mesh


def _window_sizes_ok(geom, V, T, h_gap):
    """Per-triangle check of the gap-window size law (True outside the window).

    Vertical extent must be <= delta(z1)/h_gap and horizontal extent
    <= sqrt(eps*max(eps, |z1|)), with z1 the centroid abscissa.
    """
    cen = V[T].mean(axis=1)
    inwin = geom.in_strip(cen, geom.R_local)
    ok = np.ones(len(T), dtype=bool)
    if not inwin.any():
        return ok
    P = V[T[inwin]]
    z1 = cen[inwin, 0]
    dx = P[:, :, 0].max(1) - P[:, :, 0].min(1)
    dy = P[:, :, 1].max(1) - P[:, :, 1].min(1)
    lim_y = geom.local_half_gap(z1) / h_gap
    lim_x = np.sqrt(geom.epsilon * np.maximum(geom.epsilon, np.abs(z1)))
    ok[inwin] = (dy <= lim_y) & (dx <= lim_x)
    return ok


def _diameters(V, T):
    P = V[T]
    d = [np.hypot(*(P[:, (k + 1) % 3] - P[:, k]).T) for k in range(3)]
    return np.maximum(np.maximum(d[0], d[1]), d[2])


def _from_triangle(m, geom, h_gap, h_far):
    V = np.ascontiguousarray(m["vertices"], dtype=float)
    T = np.ascontiguousarray(m["triangles"], dtype=np.int64)
    reg = m["triangle_attributes"][:, 0].astype(np.int64)
    P = V[T]
    det = ((P[:, 1, 0] - P[:, 0, 0]) * (P[:, 2, 1] - P[:, 0, 1])
           - (P[:, 2, 0] - P[:, 0, 0]) * (P[:, 1, 1] - P[:, 0, 1]))
    flip = det < 0
    T[flip] = T[flip][:, [0, 2, 1]]
    segs = np.asarray(m["segments"], dtype=np.int64)
    smark = np.asarray(m["segment_markers"]).ravel()
    keep = np.isin(smark, list(_TAG_OF))
    segs, smark = segs[keep], smark[keep]
    tags = np.array([int(_TAG_OF[int(k)]) for k in smark], dtype=np.int64)
    return Mesh(V, T, reg, segs, tags, int(h_gap), float(h_far), geom)


# -- uniform refinement (manufactured-solution studies) ------------------------------


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every triangle into four; new boundary midpoints are projected onto
    the analytic curve when the mesh carries a geometry."""
    tris = mesh.triangles
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    es = np.sort(e, axis=1)
    uniq, inv = np.unique(es, axis=0, return_inverse=True)
    inv = inv.ravel()
    nt = len(tris)
    mid = mesh.n_nodes + np.arange(len(uniq))
    new_nodes = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    m01, m12, m20 = mid[inv[:nt]], mid[inv[nt:2 * nt]], mid[inv[2 * nt:]]
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    T = np.concatenate([
        np.stack([a, m01, m20], 1), np.stack([m01, b, m12], 1),
        np.stack([m20, m12, c], 1), np.stack([m01, m12, m20], 1)])
    reg = np.tile(mesh.region, 4)
    # boundary edges
    be = np.sort(mesh.boundary_edges, axis=1)
    lookup = {tuple(r): k for k, r in enumerate(uniq)}
    bmid = np.array([mid[lookup[tuple(r)]] for r in be], dtype=np.int64)
    segs = np.concatenate([np.stack([mesh.boundary_edges[:, 0], bmid], 1),
                           np.stack([bmid, mesh.boundary_edges[:, 1]], 1)])
    tags = np.tile(mesh.boundary_tag, 2)
    nodes = np.vstack([mesh.nodes, new_nodes])
    g = mesh.geom
    if g is not None:
        for tag in BoundaryTag:
            sel = bmid[mesh.boundary_tag == int(tag)]
            if not len(sel):
                continue
            p = nodes[sel]
            if tag is BoundaryTag.OUTER:
                nodes[sel] = p * (g.outer_radius / np.hypot(p[:, 0], p[:, 1]))[:, None]
            else:
                i = 1 if tag is BoundaryTag.GAMMA1 else 2
                th, foot, _, _, _ = g.shape(i).closest_point(g.to_canonical(i, p))
                nodes[sel] = g.from_canonical(i, foot)
    return Mesh(np.ascontiguousarray(nodes), np.ascontiguousarray(T, dtype=np.int64),
                reg.astype(np.int64), segs.astype(np.int64), tags.astype(np.int64),
                mesh.h_gap, mesh.h_far, g)


# -- text export ---------------------------------------------------------------------


def write_mesh(mesh: Mesh, path):
    with open(path, "w") as fh:
        for k, (x, y) in enumerate(mesh.nodes):
            fh.write(f"n {x:.17g} {y:.17g}\n")
        for (i, j, k), r in zip(mesh.triangles, mesh.region):
            fh.write(f"t {i} {j} {k} {Region(int(r)).name}\n")
        for (i, j), t in zip(mesh.boundary_edges, mesh.boundary_tag):
            fh.write(f"b {i} {j} {BoundaryTag(int(t)).name}\n")


def read_mesh(path, geom=None) -> Mesh:
    nodes, tris, reg, be, bt = [], [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            kind = parts[0]
            try:
                if kind == "n":
                    nodes.append((float(parts[1]), float(parts[2])))
                elif kind == "t":
                    tris.append(tuple(int(p) for p in parts[1:4]))
                    reg.append(int(Region[parts[4]]))
                elif kind == "b":
                    be.append((int(parts[1]), int(parts[2])))
                    bt.append(int(BoundaryTag[parts[3]]))
                else:
                    raise ValueError(f"unknown record '{kind}'")
            except (IndexError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return Mesh(np.array(nodes, dtype=float).reshape(-1, 2),
                np.array(tris, dtype=np.int64).reshape(-1, 3),
                np.array(reg, dtype=np.int64), np.array(be, dtype=np.int64).reshape(-1, 2),
                np.array(bt, dtype=np.int64), geom=geom)
