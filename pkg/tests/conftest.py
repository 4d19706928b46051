from __future__ import annotations

import numpy as np
import pytest

from affseg.mesh_io import Mesh
from affseg.voxel_grid import GridSpec, voxelize


class DisjointSet:
    """Plain union-find used as an independent oracle."""

    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def groups(self):
        out = {}
        for i in range(len(self.parent)):
            out.setdefault(self.find(i), set()).add(i)
        return frozenset(frozenset(g) for g in out.values())


def same_label_components(n, edges, labels):
    """Components of the graph restricted to edges whose ends share a label."""
    ds = DisjointSet(n)
    for a, b in np.asarray(edges).tolist():
        if labels[a] == labels[b]:
            ds.union(a, b)
    return ds.groups()


def point_cloud(coords, voxel_size=1.0, num_scales=2, edges=(), **labels):
    """Mesh with one vertex at the centre of each listed scale-0 voxel."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    mesh = Mesh.from_arrays((coords + 0.5) * voxel_size, np.zeros((0, 3)), extra_edges=edges, **labels)
    spec = GridSpec(voxel_size, 64, num_scales, origin=(0.0, 0.0, 0.0))
    return mesh, voxelize(mesh, spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def report():
    def record(number, title, ok, detail):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
