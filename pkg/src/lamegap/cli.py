"""``lame-gap run|validate CONFIG``: TOML-driven experiments writing a run directory."""
from __future__ import annotations

import argparse
import logging
import math
import os
import shutil
import sys
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import experiments as ex
from .elasticity import ElasticConstants, VectorField, first_korn_check
from .geometry import GeometryDomainError
from .meshgen import EPS_FLOOR, BoundaryTag, MeshError, MeshInvariantError, build_mesh
from .solvers import BOUNDARY_DATA, check_ladder, manufactured_rate
from .sparsela import ConvergenceError, SolverOptions

log = logging.getLogger("lamegap")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
KINDS = ("sweep", "convergence", "verification")

DEFAULT_CHECKS = {
    "sweep": ["rows_complete", "slope_sup_grad", "slope_c_diff", "c_bounded", "a11_positive",
              "slope_a11_11", "slope_a11_22", "slope_det_a11", "a11_33_stable", "decomposition",
              "residual_bounded", "profile_spread", "inclusion_gradient"],
    "convergence": ["convergence_energy_order", "convergence_monotone", "convergence_final_ratio"],
    "verification": ["mms_rate", "korn_ratio"],
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    name: str
    kind: str
    geometry: dict
    material: ElasticConstants
    phi: str
    h_gap: int
    h_far: float | None
    solver: SolverOptions
    epsilons: list = field(default_factory=list)
    m_list: list = field(default_factory=list)
    ladder: list = field(default_factory=list)
    conv_epsilon: float = 0.05
    checks: list = field(default_factory=list)
    overrides: dict = field(default_factory=dict)
    out: str = "run"
    snapshots: bool = False
    seed: int = 0
    korn_fields: int = 50
    raw: dict = field(default_factory=dict, repr=False)

    def sweep_configs(self, run_dir=None):
        """One SweepConfig per m (a single one when no m list is given)."""
        out = []
        ms = self.m_list or [None]
        for m in ms:
            g = dict(self.geometry)
            name = self.name
            if m is not None:
                g["m"] = m
                name = f"{self.name}_m{m:g}"
            snap = os.path.join(run_dir, "fields", name) if (run_dir and self.snapshots) else None
            out.append(ex.SweepConfig(name, g, list(self.epsilons), self.material, self.phi, self.h_gap,
                                      self.h_far, self.solver, snapshot_dir=snap))
        return out

    def convergence_config(self):
        return ex.ConvergenceConfig(self.name, dict(self.geometry), self.conv_epsilon, self.material,
                                    list(self.ladder), self.phi, self.h_gap, self.h_far, self.solver)


def _need(tbl, key, where):
    if key not in tbl:
        raise ConfigError(f"missing key '{where}.{key}'" if where else f"missing table [{key}]")
    return tbl[key]


def _table(doc, key, required=True):
    v = doc.get(key)
    if v is None:
        if required:
            raise ConfigError(f"missing table [{key}]")
        return {}
    if not isinstance(v, dict):
        raise ConfigError(f"'{key}' must be a table")
    return v


def _num(v, where, cast=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{where}' must be a number (got {v!r})")
    return cast(v)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        # the decoder message carries "(at line L, column C)"
        raise ConfigError(f"{path}: TOML parse error: {e}") from None
    return parse_config(doc)


def parse_config(doc: dict) -> RunConfig:
    exp = _table(doc, "experiment")
    kind = exp.get("kind", "sweep")
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {KINDS} (got {kind!r})")
    name = str(_need(exp, "name", "experiment"))
    geom = dict(_table(doc, "geometry"))
    shape = _need(geom, "shape", "geometry")
    if shape not in ("disk", "mflat"):
        raise ConfigError(f"geometry.shape must be 'disk' or 'mflat' (got {shape!r})")
    mat = _table(doc, "material", required=False)
    try:
        c = ElasticConstants(_num(mat.get("lambda", 1.0), "material.lambda"), _num(mat.get("mu", 1.0), "material.mu"))
    except ValueError as e:
        raise ConfigError(f"material: {e}") from None
    data = _table(doc, "data", required=False)
    phi = data.get("phi", "shear")
    if phi not in BOUNDARY_DATA:
        raise ConfigError(f"data.phi: unknown boundary data id {phi!r}; known: {sorted(BOUNDARY_DATA)}")
    mesh = _table(doc, "mesh", required=False)
    h_gap = _num(mesh.get("h_gap", 8), "mesh.h_gap", int)
    h_far = mesh.get("h_far")
    h_far = None if h_far is None else _num(h_far, "mesh.h_far")
    sol = _table(doc, "solver", required=False)
    try:
        opts = SolverOptions(tol=_num(sol.get("tol", 1e-10), "solver.tol"),
                             max_iter=_num(sol.get("max_iter", 20000), "solver.max_iter", int),
                             mode=sol.get("mode", "direct"), precond=sol.get("precond", "jacobi"))
    except ValueError as e:
        raise ConfigError(f"solver: {e}") from None
    outp = _table(doc, "output", required=False)
    cfg = RunConfig(name, kind, geom, c, phi, h_gap, h_far, opts, out=str(outp.get("dir", "run")),
                    snapshots=bool(outp.get("snapshots", False)), seed=int(doc.get("seed", 0)), raw=doc)
    chk = _table(doc, "checks", required=False)
    cfg.checks = list(chk.get("names", DEFAULT_CHECKS[kind]))
    cfg.overrides = {k: v for k, v in chk.items() if isinstance(v, dict)}
    if kind == "sweep":
        sw = _table(doc, "sweep")
        cfg.epsilons = _epsilons(sw)
        cfg.m_list = [_num(m, "sweep.m") for m in sw.get("m", [])]
    elif kind == "convergence":
        cv = _table(doc, "convergence")
        cfg.conv_epsilon = _num(cv.get("epsilon", 0.05), "convergence.epsilon")
        if "ladder" in cv:
            cfg.ladder = [(float(a), float(b)) for a, b in cv["ladder"]]
        else:
            base = _num(cv.get("base", 10.0), "convergence.base")
            powers = cv.get("powers", [1, 2, 3, 4])
            cfg.ladder = ex.geometric_ladder(c.lam, c.mu, base, powers)
        try:
            check_ladder(cfg.ladder)
        except ValueError as e:
            raise ConfigError(f"convergence.ladder: {e}") from None
        cfg.epsilons = [cfg.conv_epsilon]
    else:
        vf = _table(doc, "verification", required=False)
        cfg.conv_epsilon = _num(vf.get("epsilon", 0.2), "verification.epsilon")
        cfg.korn_fields = _num(vf.get("korn_fields", 50), "verification.korn_fields", int)
        cfg.epsilons = [cfg.conv_epsilon]
    unknown = [c_ for c_ in cfg.checks if not isinstance(c_, str)]
    if unknown:
        raise ConfigError("checks.names must be a list of strings")
    _check_floors(cfg)
    return cfg


def _epsilons(sw):
    if "epsilons" in sw:
        eps = [_num(e, "sweep.epsilons") for e in sw["epsilons"]]
    elif "ladder" in sw:
        lad = sw["ladder"]
        start = _num(_need(lad, "start", "sweep.ladder"), "sweep.ladder.start")
        ratio = _num(lad.get("ratio", 0.5), "sweep.ladder.ratio")
        count = _num(lad.get("count", 5), "sweep.ladder.count", int)
        eps = [start * ratio**k for k in range(count)]
    else:
        raise ConfigError("missing key 'sweep.epsilons' (or a [sweep.ladder] rule)")
    if not eps:
        raise ConfigError("sweep.epsilons is empty")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("sweep.epsilons must be strictly decreasing")
    return eps


def _check_floors(cfg: RunConfig):
    ms = cfg.m_list or [cfg.geometry.get("m")]
    for m in ms:
        g = dict(cfg.geometry)
        if m is not None:
            g["m"] = m
        for e in cfg.epsilons:
            try:
                geom = ex.make_geometry(g, e)
            except (ValueError, TypeError) as err:
                raise ConfigError(f"geometry at epsilon={e:g}: {err}") from None
            R0 = geom.outer_radius
            if e < EPS_FLOOR * R0:
                raise ConfigError(f"epsilon={e:g} is below the mesh floor {EPS_FLOOR:g}*outer_radius={EPS_FLOOR * R0:g}")
            if cfg.h_gap < 4:
                raise ConfigError(f"mesh.h_gap must be >= 4 (got {cfg.h_gap})")
            if cfg.h_far is not None and cfg.h_far > R0 / 8:
                raise ConfigError(f"mesh.h_far must be <= outer_radius/8 = {R0 / 8:g}")


# -- plan -----------------------------------------------------------------------------------------


def estimate_nodes(geom, h_gap):
    """Rough node count from the gap size law integrated over the strip.  The factor 12
    (grading halo around the strip) and the far-field constant were fitted to disk runs."""
    e = geom.epsilon
    R = geom.R_local
    x = np.linspace(-2 * R, 2 * R, 801)
    gap = 2 * geom.local_half_gap(x)
    h = np.minimum(gap / h_gap, np.sqrt(e * np.maximum(e, np.abs(x))))
    strip = float(trapezoid(1.15 * gap / h**2, x))
    return int(12 * strip + 800)


def plan_lines(cfg: RunConfig):
    lines = [f"experiment {cfg.name} ({cfg.kind}), geometry {cfg.geometry}, phi={cfg.phi}, "
             f"h_gap={cfg.h_gap}, solver={cfg.solver.mode} tol={cfg.solver.tol:g}"]
    if cfg.kind == "sweep":
        for sc in cfg.sweep_configs():
            for e in sc.epsilons:
                geom = ex.make_geometry(sc.geometry, e)
                n = estimate_nodes(geom, cfg.h_gap)
                lines.append(f"  {sc.name} eps={e:g}: 1 mesh, 1 limit solve + 7 decomposition solves, "
                             f"~{n} nodes (~{2 * n} dofs)")
    elif cfg.kind == "convergence":
        geom = ex.make_geometry(cfg.geometry, cfg.conv_epsilon)
        n = estimate_nodes(geom, cfg.h_gap)
        lines.append(f"  eps={cfg.conv_epsilon:g}: 1 mesh, 1 limit solve + {len(cfg.ladder)} finite solves, "
                     f"~{n} nodes (~{2 * n} dofs)")
        for lam, mu in cfg.ladder:
            lines.append(f"    rung lambda1={lam:g} mu1={mu:g}")
    else:
        lines.append(f"  eps={cfg.conv_epsilon:g}: manufactured solve on a mesh and its uniform refinement; "
                     f"{cfg.korn_fields} seeded Korn fields")
    lines.append(f"  checks: {', '.join(cfg.checks)}")
    return lines


# -- run --------------------------------------------------------------------------------------------


def _fmt(e):
    return f"{e:g}"


def _run_sweep(cfg, run_dir, jobs):
    checks, fits, extra, failed_rows = [], {}, {"rows": []}, []
    os.makedirs(os.path.join(run_dir, "profiles"), exist_ok=True)
    rates, audit, resid = [], [], []
    for sc in cfg.sweep_configs(run_dir):
        table = ex.sweep_epsilon(sc, jobs)
        m = float(sc.geometry.get("m", 2.0)) if sc.geometry.get("shape") == "mflat" else 2.0
        rates.append(table.rates_csv())
        audit.append(table.audit_csv())
        resid.append(table.residuals_csv())
        tag = "" if len(cfg.m_list) <= 1 else f"_m{m:g}"
        for r in table.good:
            with open(os.path.join(run_dir, "profiles", f"eps_{_fmt(r.epsilon)}{tag}.csv"), "w") as fh:
                fh.write(table.profile_csv(r))
        for r in table.rows:
            extra["rows"].append(dict(sweep=sc.name, epsilon=r.epsilon, ok=r.ok, reason=r.reason,
                                      n_nodes=r.n_nodes, seconds={k: v for k, v in r.seconds.items()
                                                                  if k != "traceback"}))
            if not r.ok:
                failed_rows.append(r)
                log.error("row eps=%g failed: %s", r.epsilon, r.reason)
        cs = ex.sweep_checks(table, cfg.checks, m=m, overrides=cfg.overrides)
        if len(cfg.m_list) > 1:
            for c in cs:
                c.name = f"{c.name}[m={m:g}]"
        checks += cs
        for col in ("sup_grad", "sup_grad_fiber", "c_diff_1", "a11_11", "a11_22", "a11_33", "det_a11", "c_max"):
            try:
                fits[f"{sc.name}:{col}"] = ex.fit_rate(table, col).as_dict()
            except ex.FitError as e:
                fits[f"{sc.name}:{col}"] = {"refused": str(e)}
    _write_joined(os.path.join(run_dir, "rates.csv"), rates)
    _write_joined(os.path.join(run_dir, "coeff_audit.csv"), audit)
    _write_joined(os.path.join(run_dir, "residuals.csv"), resid)
    return checks, fits, extra, failed_rows


def _write_joined(path, blocks):
    """Concatenate CSV blocks that share a header."""
    with open(path, "w") as fh:
        for k, b in enumerate(blocks):
            lines = b.splitlines(True)
            fh.writelines(lines if k == 0 else lines[1:])


def _run_convergence(cfg, run_dir):
    table, ok = ex.run_convergence_experiment(cfg.convergence_config(), os.path.join(run_dir, "convergence.csv"))
    if cfg.phi in ("psi1", "psi2", "psi3", "zero"):
        checks = ex.rigid_convergence_checks(table)
    else:
        checks = [c for c in ex.convergence_checks(table, ok) if c.name in cfg.checks] or ex.convergence_checks(table, ok)
    if not ok:
        for r in table.rows:
            log.error("rung n=%d: I_n=%.17g > I_inf=%.17g", r.n, r.I_n, r.I_inf)
    return checks, {}, {"convergence_rows": [vars(r) for r in table.rows]}, []


def _run_verification(cfg, run_dir):
    geom = ex.make_geometry(cfg.geometry, cfg.conv_epsilon)
    mesh = build_mesh(geom, max(cfg.h_gap, 4), cfg.h_far)
    checks = []
    e0, e1, ratio = manufactured_rate(mesh, cfg.material, cfg.solver)
    checks.append(ex.CheckResult("mms_rate", ratio, "H1 error ratio in [1.7, 2.3]", [1.7, 2.3],
                                 1.7 <= ratio <= 2.3, f"errors {e0:.4e} -> {e1:.4e}"))
    rng = np.random.default_rng(cfg.seed)
    outer = mesh.boundary_nodes(BoundaryTag.OUTER)
    worst = 0.0
    for _ in range(cfg.korn_fields):
        vals = rng.standard_normal((mesh.n_nodes, 2)) * rng.uniform(0.1, 10.0)
        vals[outer] = 0.0
        worst = max(worst, first_korn_check(mesh, VectorField(mesh, vals)))
    checks.append(ex.CheckResult("korn_ratio", worst, "<= 2 + 1e-10", 2 + 1e-10, worst <= 2 + 1e-10,
                                 f"{cfg.korn_fields} seeded fields, seed {cfg.seed}"))
    checks = [c for c in checks if c.name in cfg.checks] or checks
    return checks, {}, {}, []


def prepare_run_dir(cfg, config_path, out=None, force=False):
    base = out or cfg.out
    run_dir = os.path.join(base, cfg.name)
    if os.path.exists(run_dir) and os.listdir(run_dir):
        if not force:
            raise ConfigError(f"run directory {run_dir} exists; pass --force to overwrite")
        shutil.rmtree(run_dir)
    os.makedirs(run_dir, exist_ok=True)
    shutil.copyfile(config_path, os.path.join(run_dir, "config.toml"))
    return run_dir


def execute(cfg: RunConfig, run_dir, jobs=1):
    """Runs the experiment, writes artifacts and summary.json; returns the exit code."""
    runner = {"sweep": lambda: _run_sweep(cfg, run_dir, jobs),
              "convergence": lambda: _run_convergence(cfg, run_dir),
              "verification": lambda: _run_verification(cfg, run_dir)}[cfg.kind]
    try:
        checks, fits, extra, failed = runner()
    except (ConvergenceError, np.linalg.LinAlgError, MeshError, MeshInvariantError, GeometryDomainError) as e:
        ex.write_summary(os.path.join(run_dir, "summary.json"), [], {},
                         {"error": f"{type(e).__name__}: {e}", "passed": False})
        log.error("solver failure: %s", e)
        return EXIT_SOLVER
    ex.write_summary(os.path.join(run_dir, "summary.json"), checks, fits, extra)
    for c in checks:
        print(c.line())
    if failed:
        return EXIT_SOLVER
    return EXIT_PASS if all(c.passed for c in checks) else EXIT_FAIL


def _default_jobs():
    v = os.environ.get("LAME_GAP_JOBS")
    if v is None:
        return 1
    try:
        n = int(v)
    except ValueError:
        raise ConfigError(f"LAME_GAP_JOBS must be an integer (got {v!r})") from None
    if n < 1:
        raise ConfigError("LAME_GAP_JOBS must be >= 1")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="lame-gap", description="Narrow-gap Lame experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a TOML config")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=None, help="worker processes for sweep rows (default $LAME_GAP_JOBS or 1)")
    r.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    r.add_argument("--out", default=None, help="parent of the run directory (default: output.dir or ./run)")
    v = sub.add_parser("validate", help="check a config and print the plan without solving")
    v.add_argument("config")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_PASS
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print("OK")
            for line in plan_lines(cfg):
                print(line)
            return EXIT_PASS
        jobs = args.jobs if args.jobs is not None else _default_jobs()
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        run_dir = prepare_run_dir(cfg, args.config, args.out, args.force)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(f"run directory: {run_dir}")
    return execute(cfg, run_dir, jobs)


if __name__ == "__main__":
    sys.exit(main())
