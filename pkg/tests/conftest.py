import numpy as np
import pytest

from lamegap.geometry import GapGeometry
from lamegap.meshgen import BoundaryTag, Mesh, Region, build_mesh


@pytest.fixture(scope="session")
def disk01():
    return GapGeometry.disk(0.1)


@pytest.fixture(scope="session")
def mesh01(disk01):
    return build_mesh(disk01, 8)


@pytest.fixture(scope="session")
def coarse_geom():
    return GapGeometry.disk(0.2, outer_radius=2.5)


@pytest.fixture(scope="session")
def coarse_mesh(coarse_geom):
    return build_mesh(coarse_geom, 4)


def square_mesh(n=4):
    """Structured unit square split into 2 n^2 triangles, all MATRIX, boundary tagged OUTER."""
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], -1)
    idx = lambda i, j: i * (n + 1) + j  # noqa: E731
    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris += [(a, b, c), (a, c, d)]
    edges = []
    for k in range(n):
        edges += [(idx(k, 0), idx(k + 1, 0)), (idx(n, k), idx(n, k + 1)),
                  (idx(k + 1, n), idx(k, n)), (idx(0, k + 1), idx(0, k))]
    tris = np.array(tris, dtype=np.int64)
    return Mesh(nodes, tris, np.full(len(tris), int(Region.MATRIX), dtype=np.int64),
                np.array(edges, dtype=np.int64), np.full(len(edges), int(BoundaryTag.OUTER), dtype=np.int64))


# -- shared sweeps (the acceptance presets in configs/) ------------------------------------------

SWEEP_EPS = [0.2, 0.1, 0.05, 0.025, 0.0125]


@pytest.fixture(scope="session")
def disk_sweep():
    from lamegap.experiments import SweepConfig, sweep_epsilon
    from lamegap.sparsela import SolverOptions

    cfg = SweepConfig("disks", {"shape": "disk", "radius": 1.0, "outer_radius": 8.0}, SWEEP_EPS,
                      solver=SolverOptions(mode="direct"))
    return sweep_epsilon(cfg)


@pytest.fixture(scope="session")
def mflat_sweep():
    from lamegap.experiments import SweepConfig, sweep_epsilon
    from lamegap.sparsela import SolverOptions

    g = {"shape": "mflat", "m": 4.0, "lambda_flat": 1.0, "radius": 1.0, "R_local": 0.25, "outer_radius": 8.0}
    cfg = SweepConfig("mflat", g, SWEEP_EPS, solver=SolverOptions(mode="direct"), residuals=False)
    return sweep_epsilon(cfg)


@pytest.fixture(scope="session")
def convergence_run():
    from lamegap.experiments import ConvergenceConfig, run_convergence_experiment

    return run_convergence_experiment(ConvergenceConfig("conv", {"shape": "disk", "outer_radius": 8.0}))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
