"""epsilon sweeps, rate fits, profiles and the stiff-inclusion convergence experiment."""
from __future__ import annotations

import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .auxfields import RESIDUAL_HEADER, ResidualReport, residual_analysis
from .coeffsys import AUDIT_HEADER, AuditReport, assemble_coefficient_system, solve_coefficients, spectral_audit
from .elasticity import ElasticConstants, VectorField
from .geometry import DEFAULT_OUTER_RADIUS, GapGeometry, ShapeKind, dist_to_segment
from .meshgen import Region, build_mesh, mesh_quality, write_mesh
from .solvers import (
    LimitSolution,
    boundary_data,
    convergence_study,
    h1_distance,
    inclusion_gradient_error,
    reconstruct,
    solve_decomposition,
    solve_limit,
)
from .sparsela import SolverOptions

__all__ = [
    "FitError",
    "RateFit",
    "fit_rate",
    "SweepConfig",
    "RowResult",
    "RateTable",
    "ProfileSample",
    "profile_extract",
    "make_geometry",
    "compute_row",
    "sweep_epsilon",
    "ConvergenceConfig",
    "run_convergence_experiment",
    "CheckResult",
    "sweep_checks",
    "convergence_checks",
    "rigid_convergence_checks",
    "write_summary",
    "geometric_ladder",
    "profile_points",
    "locate",
    "RATES_HEADER",
]

RATES_HEADER = ("epsilon,sup_grad_matrix,sup_grad_fiber,c_diff_1,c_diff_2,c_max,"
                "a11_11,a11_22,a11_33,a11_12,det_a11,min_eig,energy,"
                "C1_1,C1_2,C1_3,C2_1,C2_2,C2_3,n_nodes,n_triangles")


# -- regression -------------------------------------------------------------------------


class FitError(ValueError):
    pass


@dataclass
class RateFit:
    slope: float
    intercept: float
    stderr: float  # residual standard error of the log-log fit
    leverage: list
    n: int
    excluded_coarsest: bool = False
    column: str = ""

    def as_dict(self):
        return asdict(self)


def _ols(x, y):
    X = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = max(len(x) - 2, 1)
    stderr = float(math.sqrt(float(resid @ resid) / dof))
    xc = x - x.mean()
    lev = 1.0 / len(x) + xc**2 / float(xc @ xc)
    return float(coef[1]), float(coef[0]), stderr, lev


def fit_rate(eps, values=None, column="", leverage_cap=0.8, min_points=4) -> RateFit:
    """OLS slope of log|value| against log eps.

    ``eps`` may be a :class:`RateTable` with ``values`` naming a column.  The coarsest
    epsilon is dropped when its leverage exceeds ``leverage_cap`` (reported either way).
    """
    if isinstance(eps, RateTable):
        column = values
        eps, values = eps.column("epsilon"), np.abs(eps.column(values))
    e = np.asarray(eps, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v)
    e, v = e[ok], v[ok]
    if len(v) < min_points:
        raise FitError(f"column {column or '?'}: need >= {min_points} finite points, have {len(v)}")
    if np.any(v <= 0):
        raise FitError(f"column {column or '?'} has nonpositive entries; log-log fit refused")
    x, y = np.log(e), np.log(v)
    slope, icpt, se, lev = _ols(x, y)
    excluded = False
    coarse = int(np.argmax(e))
    if lev[coarse] > leverage_cap and len(v) - 1 >= min_points:
        keep = np.arange(len(v)) != coarse
        slope, icpt, se, lev2 = _ols(x[keep], y[keep])
        lev = np.insert(lev2, coarse, np.nan)
        excluded = True
    return RateFit(slope, icpt, se, [float(t) for t in lev], int(len(v) - excluded), excluded, column)


# -- configuration ------------------------------------------------------------------------


def make_geometry(g: dict, epsilon: float) -> GapGeometry:
    shape = g.get("shape", "disk")
    outer = float(g.get("outer_radius", DEFAULT_OUTER_RADIUS))
    if shape == "disk":
        return GapGeometry.disk(epsilon, radius=float(g.get("radius", 1.0)),
                                radius2=g.get("radius2"), outer_radius=outer, R_local=g.get("R_local"))
    if shape == "mflat":
        return GapGeometry.mflat(epsilon, m=float(g.get("m", 4)), lambda_flat=float(g.get("lambda_flat", 1.0)),
                                 m2=g.get("m2"), lambda2=g.get("lambda2"), radius=float(g.get("radius", 1.0)),
                                 outer_radius=outer, R_local=float(g.get("R_local", 0.25)))
    raise ValueError(f"geometry.shape must be 'disk' or 'mflat' (got {shape!r})")


@dataclass
class SweepConfig:
    name: str
    geometry: dict
    epsilons: list
    material: ElasticConstants = ElasticConstants(1.0, 1.0)
    phi: str = "shear"
    h_gap: int = 8
    h_far: float | None = None
    solver: SolverOptions = SolverOptions()
    profile_xi: tuple = (0.0, 0.5, 1.0, 2.0)
    fiber_eta: tuple = (-0.5, 0.5)
    far_point: tuple = (1.5, 0.0)
    residuals: bool = True
    snapshot_dir: str | None = None

    def __post_init__(self):
        eps = list(self.epsilons)
        if len(eps) and any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("sweep epsilons must be strictly decreasing")


# -- results ------------------------------------------------------------------------------


@dataclass
class ProfileSample:
    label: str
    x1: float
    x2: float
    dist: float
    grad: float
    product: float


@dataclass
class RowResult:
    epsilon: float
    ok: bool = True
    reason: str = ""
    n_nodes: int = 0
    n_triangles: int = 0
    quality: dict = field(default_factory=dict)
    sup_grad: float = float("nan")
    sup_grad_fiber: float = float("nan")
    argmax: tuple = (float("nan"), float("nan"))
    C: np.ndarray = field(default_factory=lambda: np.full((2, 3), np.nan))
    C_system: np.ndarray = field(default_factory=lambda: np.full((2, 3), np.nan))
    energy: float = float("nan")
    audit: AuditReport | None = None
    decomposition_error: float = float("nan")
    inclusion_grad_error: float = float("nan")
    traction: np.ndarray = field(default_factory=lambda: np.full((2, 3), np.nan))
    traction_edge: np.ndarray = field(default_factory=lambda: np.full((2, 3), np.nan))
    residuals: ResidualReport | None = None
    profile: list = field(default_factory=list)
    seconds: dict = field(default_factory=dict)

    @property
    def c_diff(self):
        return self.C[0] - self.C[1]

    @property
    def c_max(self):
        return float(np.abs(self.C).max())


@dataclass
class RateTable:
    rows: list
    meta: dict

    @property
    def good(self):
        return [r for r in self.rows if r.ok]

    def column(self, name):
        out = []
        for r in self.good:
            if name in ("c_diff_1", "c_diff_2", "c_diff_3"):
                out.append(r.c_diff[int(name[-1]) - 1])
            elif name == "c_max":
                out.append(r.c_max)
            elif name.startswith("a11_") or name in ("det_a11", "min_eig"):
                out.append(getattr(r.audit, name) if r.audit else np.nan)
            elif name.startswith("w") or name.startswith("v"):
                out.append(_residual_value(r.residuals, name))
            else:
                out.append(getattr(r, name))
        return np.array(out, dtype=float)

    def rates_csv(self):
        lines = [RATES_HEADER]
        for r in self.good:
            a = r.audit
            d = r.c_diff
            vals = [r.epsilon, r.sup_grad, r.sup_grad_fiber, d[0], d[1], r.c_max,
                    a.a11_11, a.a11_22, a.a11_33, a.a11_12, a.det_a11, a.min_eig, r.energy,
                    *r.C.ravel(), r.n_nodes, r.n_triangles]
            lines.append(",".join(f"{v:.17g}" for v in vals))
        return "\n".join(lines) + "\n"

    def audit_csv(self):
        return "\n".join([AUDIT_HEADER] + [r.audit.csv_row() for r in self.good if r.audit]) + "\n"

    def residuals_csv(self):
        lines = [RESIDUAL_HEADER]
        for r in self.good:
            if r.residuals is not None:
                lines += r.residuals.csv_lines()
        return "\n".join(lines) + "\n"

    def profile_csv(self, row):
        lines = ["label,x1,x2,dist,grad,product"]
        for s in row.profile:
            lines.append(f"{s.label},{s.x1:.17g},{s.x2:.17g},{s.dist:.17g},{s.grad:.17g},{s.product:.17g}")
        return "\n".join(lines) + "\n"


def _residual_value(rep, name):
    """``w13_total``, ``w13_sup``, ``w11_window0`` or ``v11_sup``."""
    if rep is None:
        return np.nan
    f, _, kind = name.partition("_")
    if f.startswith("v"):
        return rep.v_sup_grad[f]
    if kind == "total":
        return rep.total(f)
    if kind == "sup":
        return rep.sup(f)
    if kind.startswith("window"):
        z = sorted({r.window_z1 for r in rep.rows})[int(kind[6:] or 0)]
        return rep.window(f, z)
    raise KeyError(name)


# -- profiles -----------------------------------------------------------------------------


def locate(mesh, pts, tris):
    """Index (into ``tris``) of a triangle containing each point, -1 if none."""
    P = mesh.nodes[mesh.triangles[tris]]
    a, b, c = P[:, 0], P[:, 1], P[:, 2]
    out = np.full(len(pts), -1)
    for k, x in enumerate(np.atleast_2d(pts)):
        d = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
        l1 = ((b[:, 0] - x[0]) * (c[:, 1] - x[1]) - (c[:, 0] - x[0]) * (b[:, 1] - x[1])) / d
        l2 = ((c[:, 0] - x[0]) * (a[:, 1] - x[1]) - (a[:, 0] - x[0]) * (c[:, 1] - x[1])) / d
        l3 = 1.0 - l1 - l2
        inside = np.flatnonzero((l1 >= -1e-12) & (l2 >= -1e-12) & (l3 >= -1e-12))
        if len(inside):
            out[k] = inside[0]
    return out


def profile_points(geom: GapGeometry, xi=(0.0, 0.5, 1.0, 2.0), eta=(-0.5, 0.5), far=(1.5, 0.0)):
    """Sample points at positions scaled with the gap: centre line x1 = xi*eps^(1/m),
    vertical fiber x2 = eta*eps at x1 = 0, and one far point."""
    e = geom.epsilon
    s = e ** (1.0 / geom.m)
    pts, labels = [], []
    for v in xi:
        pts.append((v * s, 0.0))
        labels.append(f"centre_xi{v:g}")
    for v in eta:
        pts.append((0.0, v * e))
        labels.append(f"fiber_eta{v:g}")
    if far is not None:
        pts.append(tuple(far))
        labels.append("far")
    return np.array(pts, dtype=float), labels


def profile_weight(geom: GapGeometry, dist):
    """Bound shape for |grad u|: 1/(sqrt(eps)+dist) for disks, (eps^(1-1/m)+dist)/(eps+dist^m)
    for m-flat inclusions.  The witness product is |grad u| divided by this weight."""
    e = geom.epsilon
    if geom.shape_kind is ShapeKind.DISK:
        return 1.0 / (math.sqrt(e) + dist)
    m = geom.m
    return (e ** (1 - 1 / m) + dist) / (e + dist**m)


def profile_extract(solution: LimitSolution, geom: GapGeometry, pts=None, labels=None):
    """Rows (label, x, dist to P1P2, |grad u|, |grad u| / weight(dist)); samples outside the
    matrix are skipped.  Returns ``(samples, skipped_count)``."""
    if pts is None:
        pts, labels = profile_points(geom)
    mesh = solution.field.mesh
    tris = mesh.tris_in(Region.MATRIX)
    idx = locate(mesh, pts, tris)
    G = solution.field.grad_norms(tris)
    out, skipped = [], 0
    for k, x in enumerate(pts):
        if idx[k] < 0:
            skipped += 1
            continue
        d = float(dist_to_segment(x, geom))
        g = float(G[idx[k]])
        out.append(ProfileSample(labels[k], float(x[0]), float(x[1]), d, g, g / profile_weight(geom, d)))
    return out, skipped


# -- one sweep row ------------------------------------------------------------------------------


def compute_row(cfg: SweepConfig, eps: float) -> RowResult:
    row = RowResult(float(eps))
    t0 = time.perf_counter()
    try:
        geom = make_geometry(cfg.geometry, eps)
        mesh = build_mesh(geom, cfg.h_gap, cfg.h_far)
        q = mesh_quality(mesh)
        row.n_nodes, row.n_triangles, row.quality = mesh.n_nodes, mesh.n_triangles, q.as_dict()
        row.seconds["mesh"] = time.perf_counter() - t0
        c = cfg.material
        phi = boundary_data(cfg.phi)
        t = time.perf_counter()
        lim = solve_limit(mesh, geom, c, phi, cfg.solver)
        row.seconds["limit"] = time.perf_counter() - t
        mt = mesh.tris_in(Region.MATRIX)
        G = lim.field.grad_norms(mt)
        k = int(np.argmax(G))
        row.sup_grad = float(G[k])
        row.argmax = tuple(float(v) for v in mesh.centroids(mt[k:k + 1])[0])
        row.sup_grad_fiber = _fiber_sup(mesh, mt, G, geom)
        row.C = lim.coeffs.C.copy()
        row.energy = lim.energy
        row.traction, row.traction_edge = lim.traction, lim.traction_edge
        row.inclusion_grad_error = inclusion_gradient_error(lim)
        t = time.perf_counter()
        dec = solve_decomposition(mesh, geom, c, phi, cfg.solver)
        row.seconds["decomposition"] = time.perf_counter() - t
        sys = assemble_coefficient_system(dec, c)
        Cs = solve_coefficients(sys)
        row.C_system = Cs.C.copy()
        row.audit = spectral_audit(sys, geom, lim.coeffs)
        rec = reconstruct(dec, Cs)
        row.decomposition_error = h1_distance(rec, lim.field, relative=True)
        if cfg.residuals:
            t = time.perf_counter()
            row.residuals = residual_analysis(dec, geom, c)
            row.seconds["residuals"] = time.perf_counter() - t
        pts, labels = profile_points(geom, cfg.profile_xi, cfg.fiber_eta, cfg.far_point)
        row.profile, _ = profile_extract(lim, geom, pts, labels)
        if cfg.snapshot_dir:
            os.makedirs(cfg.snapshot_dir, exist_ok=True)
            stem = os.path.join(cfg.snapshot_dir, f"eps_{eps:g}")
            write_mesh(mesh, stem + ".mesh.txt")
            lim.field.write(stem + ".u.txt")
    except Exception as exc:  # the sweep keeps going; the reason is recorded
        row.ok = False
        row.reason = f"{type(exc).__name__}: {exc}"
        row.seconds["traceback"] = traceback.format_exc()
    row.seconds["total"] = time.perf_counter() - t0
    return row


def _fiber_sup(mesh, mt, G, geom):
    """max |grad u| over matrix triangles crossed by the segment P1P2."""
    P = mesh.nodes[mesh.triangles[mt]]
    xs = P[:, :, 0]
    ys = P[:, :, 1]
    e = geom.epsilon
    hit = (xs.min(1) <= 0) & (xs.max(1) >= 0) & (ys.max(1) >= -e / 2) & (ys.min(1) <= e / 2)
    return float(G[hit].max()) if hit.any() else float("nan")


def _compute_row_star(args):
    return compute_row(*args)


def sweep_epsilon(cfg: SweepConfig, jobs: int = 1) -> RateTable:
    """One row per epsilon (run on ``jobs`` worker processes); rows come back in epsilon order."""
    tasks = [(cfg, float(e)) for e in cfg.epsilons]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_compute_row_star, tasks))
    else:
        rows = [compute_row(*t) for t in tasks]
    meta = dict(name=cfg.name, geometry=cfg.geometry, phi=cfg.phi, h_gap=cfg.h_gap, h_far=cfg.h_far,
                material=asdict(cfg.material), solver=asdict(cfg.solver))
    return RateTable(rows, meta)


# -- convergence ---------------------------------------------------------------------------------


@dataclass
class ConvergenceConfig:
    name: str
    geometry: dict
    epsilon: float = 0.05
    material: ElasticConstants = ElasticConstants(1.0, 1.0)
    ladder: list = field(default_factory=lambda: [(10.0**n, 10.0**n) for n in range(1, 5)])
    phi: str = "shear"
    h_gap: int = 8
    h_far: float | None = None
    solver: SolverOptions = SolverOptions()


def geometric_ladder(lam, mu, base=10.0, powers=(1, 2, 3, 4)):
    return [(lam * base**n, mu * base**n) for n in powers]


def run_convergence_experiment(cfg: ConvergenceConfig, csv_path=None):
    """Finite problems along the stiffness ladder vs the limit problem on one mesh.

    Returns ``(table, energy_ok)`` where ``energy_ok`` is the rowwise I_n[u_n] <= I_inf[u]
    verdict, with a round-off allowance of 1e-12 relative plus 1e-20 absolute (rigid data
    gives energies of order 1e-26 on both sides)."""
    geom = make_geometry(cfg.geometry, cfg.epsilon)
    mesh = build_mesh(geom, cfg.h_gap, cfg.h_far)
    table = convergence_study(mesh, geom, cfg.material, list(cfg.ladder), boundary_data(cfg.phi), cfg.solver)
    if csv_path:
        table.to_csv(csv_path)
    ok = all(r.I_n <= r.I_inf * (1 + 1e-12) + 1e-20 for r in table.rows)
    return table, ok


# -- acceptance checks ------------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    value: float
    target: object
    tolerance: object
    passed: bool
    detail: str = ""

    def as_dict(self):
        d = asdict(self)
        for k in ("value",):
            v = d[k]
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return d

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.value:.6g} target {self.target} ({self.detail})"


def _window_check(name, value, lo, hi, target, detail=""):
    return CheckResult(name, float(value), target, [lo, hi], bool(lo <= value <= hi), detail)


def _spread(v):
    v = np.abs(np.asarray(v, dtype=float))
    return float(v.max() / v.min()) if v.min() > 0 else float("inf")


def sweep_checks(table: RateTable, names, m=2.0, overrides=None):
    """Evaluate named acceptance checks on a sweep table."""
    overrides = overrides or {}
    out = []
    k = 1.0 - 1.0 / m

    def win(key, default):
        return tuple(overrides.get(key, {}).get("window", default))

    for name in names:
        try:
            if name == "slope_sup_grad":
                lo, hi = win(name, (-k - 0.12, -k + 0.12))
                out.append(_window_check(name, fit_rate(table, "sup_grad").slope, lo, hi, -k))
            elif name == "slope_c_diff":
                lo, hi = win(name, (k - 0.12, k + 0.12))
                out.append(_window_check(name, fit_rate(table, "c_diff_1").slope, lo, hi, k))
            elif name == "c_bounded":
                s = _spread(table.column("c_max"))
                out.append(CheckResult(name, s, "max/min of max|C| <= 1.25", 1.25, s <= 1.25))
            elif name == "a11_positive":
                v = float(table.column("min_eig").min())
                out.append(CheckResult(name, v, "> 0", 0.0, v > 0))
            elif name in ("slope_a11_11", "slope_a11_22"):
                lo, hi = win(name, (-k - 0.12, -k + 0.12))
                out.append(_window_check(name, fit_rate(table, name[6:]).slope, lo, hi, -k))
            elif name == "slope_det_a11":
                lo, hi = win(name, (-2 * k - 0.2, -2 * k + 0.2))
                out.append(_window_check(name, fit_rate(table, "det_a11").slope, lo, hi, -2 * k))
            elif name == "a11_33_stable":
                s = _spread(table.column("a11_33"))
                out.append(CheckResult(name, s, "max/min <= 1.30", 1.30, s <= 1.30))
            elif name == "decomposition":
                v = float(np.max(table.column("decomposition_error")))
                out.append(CheckResult(name, v, "<= 1e-7", 1e-7, v <= 1e-7))
            elif name == "residual_bounded":
                out.extend(_residual_checks(table))
            elif name == "profile_spread":
                out.append(_profile_check(table))
            elif name == "inclusion_gradient":
                v = float(np.max(table.column("inclusion_grad_error")))
                out.append(CheckResult(name, v, "<= 1e-8", 1e-8, v <= 1e-8))
            elif name == "rigid_zero":
                v = float(np.max(np.abs(table.column("energy"))))
                out.append(CheckResult(name, v, "energies <= 1e-12", 1e-12, v <= 1e-12))
            elif name == "rows_complete":
                bad = [r for r in table.rows if not r.ok]
                out.append(CheckResult(name, float(len(bad)), "0 failed rows", 0, not bad,
                                       "; ".join(r.reason for r in bad)))
            else:
                raise KeyError(f"unknown check {name!r}")
        except Exception as exc:
            out.append(CheckResult(name, float("nan"), "-", "-", False, f"{type(exc).__name__}: {exc}"))
    return out


def _residual_checks(table):
    out = []
    worst = 0.0
    for i in (1, 2):
        for a in (1, 2, 3):
            worst = max(worst, _spread(table.column(f"w{i}{a}_total")))
    out.append(CheckResult("residual_energy_bounded", worst, "max/min <= 2", 2.0, worst <= 2.0))
    ws = max(_spread(table.column("w13_sup")), _spread(table.column("w23_sup")))
    out.append(CheckResult("residual_sup_w3_bounded", ws, "max/min <= 2", 2.0, ws <= 2.0))
    v = table.column("v11_sup")
    g = float(v[-1] / v[0])
    out.append(CheckResult("v11_sup_growth", g, ">= 8", 8.0, g >= 8.0))
    return out


def _profile_check(table):
    labels = [s.label for s in table.good[0].profile]
    worst, where = 0.0, ""
    for lab in labels:
        vals = []
        for r in table.good:
            vals += [s.product for s in r.profile if s.label == lab]
        if len(vals) == len(table.good):
            s = _spread(vals)
            if s > worst:
                worst, where = s, lab
    return CheckResult("profile_spread", worst, "max/min across eps <= 3", 3.0, worst <= 3.0, f"worst at {where}")


def convergence_checks(table, energy_ok):
    d = table.column("h1_dist")
    dec = bool(np.all(np.diff(d) < 0))
    ratio = float(d[-1] / d[0]) if d[0] > 0 else 0.0
    return [
        CheckResult("convergence_energy_order", float(np.max(table.column("I_n") - table.column("I_inf"))),
                    "I_n <= I_inf every row", 0.0, bool(energy_ok)),
        CheckResult("convergence_monotone", float(np.max(np.diff(d)) if len(d) > 1 else -1.0),
                    "strictly decreasing h1_dist", 0.0, dec),
        CheckResult("convergence_final_ratio", ratio, "final/first <= 0.1", 0.1, ratio <= 0.1),
    ]


def rigid_convergence_checks(table):
    d = float(np.max(table.column("h1_dist")))
    e = float(max(np.abs(table.column("I_n")).max(), np.abs(table.column("I_inf")).max()))
    return [CheckResult("convergence_rigid", max(d, e), "h1_dist and energies <= 1e-10", 1e-10,
                        d <= 1e-10 and e <= 1e-10)]


def write_summary(path, checks, fits, extra=None):
    doc = dict(schema_version=1, passed=all(c.passed for c in checks),
               checks=[c.as_dict() for c in checks], fits=fits)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "as_dict"):
        return o.as_dict()
    raise TypeError(type(o))
