"""Compiled kernels against the numpy fallback on a gap mesh.

    python benchmarks/bench_kernels.py [--eps 0.0125] [--repeat 5]
"""
import argparse
import time

import numpy as np

from lamegap import kernels
from lamegap.geometry import GapGeometry
from lamegap.meshgen import build_mesh, make_size_field


def best_of(fn, repeat):
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t0)
    return min(ts), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--eps", type=float, default=0.0125)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        raise SystemExit("compiled extension not available; build with pip install -e . --no-build-isolation")

    geom = GapGeometry.disk(args.eps)
    mesh = build_mesh(geom, 8)
    nodes, tris = mesh.nodes, mesh.triangles
    law = make_size_field(geom, 8, geom.outer_radius / 10)
    pts = mesh.centroids()
    b, c, area = kernels.element_gradients(nodes, tris)
    lam = np.ones(len(tris))
    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, {len(law.samples)} size samples")
    print(f"{'kernel':<20}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}{'max diff':>12}")
    cases = {
        "element_gradients": lambda impl: kernels.element_gradients(nodes, tris, impl=impl)[2],
        "cst_stiffness": lambda impl: kernels.cst_stiffness(b, c, area, lam, lam, impl=impl),
        "size_field": lambda impl: kernels.size_field(pts, law.samples, law.sizes, law.grade, law.cap, impl=impl),
    }
    for name, fn in cases.items():
        tc, oc = best_of(lambda: fn("cython"), args.repeat)
        tp, op = best_of(lambda: fn("python"), args.repeat)
        diff = float(np.abs(oc - op).max())
        print(f"{name:<20}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
