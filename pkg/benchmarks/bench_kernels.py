"""Compare the compiled and numpy kernel backends on a synthetic scene.

    python benchmarks/bench_kernels.py --points 200000 --threads 1 4

Prints one row per (stage, backend, threads) with the best of ``--repeat``
wall-clock timings, and checks that every configuration returns the same
bytes.
"""
from __future__ import annotations

import argparse
import os
import time

import numpy as np

from affseg import kernels
from affseg.affinity import OracleConfig, generate_oracle
from affseg.cluster import ClusterGraph, FieldTables, cluster, edge_affinities
from affseg.synthetic import make_scene
from affseg.voxel_grid import voxelize


def best_of(fn, repeat):
    times, result = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return min(times), result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--instances", type=int, default=8)
    ap.add_argument("--flip", type=float, default=0.05)
    ap.add_argument("--threads", type=int, nargs="+", default=[1, 4])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    scene = make_scene(1, args.instances, args.points)
    grid = voxelize(scene.mesh, scene.spec)
    field = generate_oracle(grid, scene.labels, OracleConfig(args.flip, 0.1, 0))
    tables = FieldTables(grid, field)
    graph = ClusterGraph.from_mesh(scene.mesh, grid)
    ea = np.ascontiguousarray(graph.edges[:, 0])
    eb = np.ascontiguousarray(graph.edges[:, 1])
    print(f"{scene.mesh.num_vertices} points, {graph.num_edges} edges, {os.cpu_count()} CPU(s)")
    print(f"{'stage':<16}{'backend':<9}{'threads':>8}{'seconds':>10}{'vs python':>11}")

    stages = {
        "edge affinity": lambda be, t: edge_affinities(graph, tables, t, be).tobytes(),
        "components": lambda be, t: kernels.get(be).components(graph.num_nodes, ea, eb).tobytes(),
        "full cluster": lambda be, t: cluster(scene.mesh, grid, field, threads=t, backend=be).labels().tobytes(),
    }
    for name, fn in stages.items():
        baseline, outputs = None, set()
        for be in ["python"] + [b for b in sorted(kernels.BACKENDS) if b != "python"]:
            for t in args.threads if be != "python" else [1]:
                secs, out = best_of(lambda: fn(be, t), args.repeat)
                outputs.add(out)
                baseline = baseline or secs
                print(f"{name:<16}{be:<9}{t:>8}{secs:>10.3f}{baseline / secs:>10.2f}x")
        if len(outputs) != 1:
            raise SystemExit(f"{name}: backends disagree")


if __name__ == "__main__":
    main()
