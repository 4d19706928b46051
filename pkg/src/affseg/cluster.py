"""Parallel graph contraction driven by multi-scale node affinity.

Each round scores every graph edge by averaging voxel-pair affinities,
maps each node to its best neighbour (if that score beats 0.5), merges the
connected components of the mapping, and projects the edges onto the merged
nodes. Rounds repeat until every node maps to itself.

Internally nodes are indexed densely in ascending id order, and a node's id
is its smallest member point, so comparing dense indices is the same as
comparing ids.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .affinity import IGNORE, AffinityField
from .errors import ConfigError
from .mesh_io import Mesh, canonical_edges
from .voxel_grid import (
    DIRECTIONS,
    OPPOSITE,
    OccupancyCounts,
    SparseVoxelGrid,
    neighbor_pairs,
    occupancy_threshold,
    unpack,
)

MERGE_THRESHOLD = 0.5


@dataclass
class ClusterNode:
    id: int
    members: np.ndarray
    occupancy: OccupancyCounts


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    nodes: int
    edges: int
    merges: int


class ClusterGraph:
    """Evolving node partition plus the contracted edge set.

    ``node_of[p]`` is the dense index of the node holding point ``p``;
    ``ids`` maps dense index to node id; ``edges`` is a canonical ``(E, 2)``
    array of dense indices. ``occ[s]`` holds the (node, voxel, count)
    entries at scale ``s`` sorted by node then voxel, counting every member
    point whether or not the node reaches the occupancy threshold.
    """

    def __init__(self, grid: SparseVoxelGrid, node_of, ids, edges, occ=None):
        self.grid = grid
        self.node_of = np.asarray(node_of, dtype=np.int64)
        self.ids = np.asarray(ids, dtype=np.int64)
        self.edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        self.occ = occ if occ is not None else self._count_occupancy()

    @classmethod
    def from_mesh(cls, mesh: Mesh, grid: SparseVoxelGrid) -> "ClusterGraph":
        n = mesh.num_vertices
        if grid.num_points != n:
            raise ConfigError(f"grid has {grid.num_points} points, mesh has {n}")
        idx = np.arange(n, dtype=np.int64)
        return cls(grid, idx, idx, canonical_edges(mesh.edges, n))

    @classmethod
    def from_nodes(cls, grid: SparseVoxelGrid, members, edges) -> "ClusterGraph":
        """Build from member lists in any order and edges given as node-id pairs."""
        node_of = np.full(grid.num_points, -1, dtype=np.int64)
        mins = []
        for m in members:
            m = np.asarray(list(m), dtype=np.int64)
            if len(m) == 0:
                raise ValueError("empty node")
            if np.any(node_of[m] >= 0):
                raise ValueError("node member sets overlap")
            node_of[m] = len(mins)
            mins.append(int(m.min()))
        if np.any(node_of < 0):
            raise ValueError("node member sets do not cover every point")
        mins = np.asarray(mins, dtype=np.int64)
        order = np.argsort(mins)
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        node_of = rank[node_of]
        ids = mins[order]
        e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        dense = np.searchsorted(ids, e)
        if len(e) and (np.any(dense >= len(ids)) or np.any(ids[np.minimum(dense, len(ids) - 1)] != e)):
            raise ValueError("edge references an unknown node id")
        return cls(grid, node_of, ids, canonical_edges(dense, len(ids)))

    @classmethod
    def from_labels(cls, grid: SparseVoxelGrid, labels, point_edges) -> "ClusterGraph":
        """Graph whose nodes are the groups of equal ``labels``; edges projected from points."""
        labels = np.asarray(labels, dtype=np.int64)
        if len(labels) != grid.num_points:
            raise ConfigError(f"{len(labels)} cluster labels for {grid.num_points} points")
        _, group = np.unique(labels, return_inverse=True)
        group = group.reshape(-1)
        mins = np.full(group.max() + 1 if len(group) else 0, np.iinfo(np.int64).max)
        np.minimum.at(mins, group, np.arange(len(group), dtype=np.int64))
        order = np.argsort(mins)
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        node_of = rank[group]
        e = np.asarray(point_edges, dtype=np.int64).reshape(-1, 2)
        return cls(grid, node_of, mins[order], canonical_edges(node_of[e], len(order)))

    def _count_occupancy(self):
        occ = []
        for s in range(self.grid.num_scales):
            nv = self.grid.num_voxels(s)
            key = self.node_of * nv + self.grid.point_voxel[s]
            k, c = np.unique(key, return_counts=True)
            occ.append((k // nv, k % nv, c.astype(np.int64)))
        return occ

    @property
    def num_nodes(self) -> int:
        return len(self.ids)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def labels(self) -> np.ndarray:
        """Node id of every point."""
        return self.ids[self.node_of]

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.ids[self.edges]}

    def members(self) -> list[np.ndarray]:
        order = np.argsort(self.node_of, kind="stable")
        bounds = np.cumsum(np.bincount(self.node_of, minlength=self.num_nodes))[:-1]
        return np.split(order, bounds)

    def partition(self) -> frozenset[frozenset[int]]:
        return frozenset(frozenset(m.tolist()) for m in self.members())

    def node_occupancy(self, dense: int) -> OccupancyCounts:
        per_scale = []
        for s, (node, vox, cnt) in enumerate(self.occ):
            lo, hi = np.searchsorted(node, [dense, dense + 1])
            coords = unpack(self.grid.keys[s][vox[lo:hi]])
            per_scale.append(Counter({tuple(int(x) for x in c): int(n) for c, n in zip(coords, cnt[lo:hi])}))
        return OccupancyCounts(per_scale)

    @property
    def nodes(self) -> list[ClusterNode]:
        return [
            ClusterNode(int(self.ids[i]), m, self.node_occupancy(i))
            for i, m in enumerate(self.members())
        ]

    def occupied_csr(self, scale: int):
        """CSR views of occupied (>= 4**s) entries, by node and by voxel."""
        node, vox, cnt = self.occ[scale]
        sel = cnt >= occupancy_threshold(scale)
        node, vox = node[sel], vox[sel]
        node_ptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(node, minlength=self.num_nodes), out=node_ptr[1:])
        order = np.lexsort((node, vox))
        vox_ptr = np.zeros(self.grid.num_voxels(scale) + 1, dtype=np.int64)
        np.cumsum(np.bincount(vox, minlength=self.grid.num_voxels(scale)), out=vox_ptr[1:])
        return node_ptr, np.ascontiguousarray(vox), vox_ptr, np.ascontiguousarray(node[order])


class FieldTables:
    """Per-scale fused pair scores aligned to a grid.

    ``fused[s][v, d]`` is the mean of the non-IGNORE directed scores of the
    pair (v, neighbour of v along d), NaN when both are IGNORE or the
    neighbour voxel is empty.
    """

    def __init__(self, grid: SparseVoxelGrid, field: AffinityField):
        spec, fspec = grid.spec, field.spec
        if fspec.num_scales != spec.num_scales or fspec.extent != spec.extent or not np.isclose(
            fspec.voxel_size, spec.voxel_size
        ):
            raise ConfigError(
                f"affinity field grid (voxel_size={fspec.voxel_size}, extent={fspec.extent}, "
                f"scales={fspec.num_scales}) does not match the point grid (voxel_size="
                f"{spec.voxel_size}, extent={spec.extent}, scales={spec.num_scales})"
            )
        self.nbr = []
        self.fused = []
        for s in range(grid.num_scales):
            nbr = grid.neighbors(s)
            rows = field.rows_for(grid, s)
            fused = np.full(nbr.shape, np.nan)
            for d in range(6):
                has = nbr[:, d] >= 0
                a = rows[has, d]
                b = rows[nbr[has, d], OPPOSITE[d]]
                a_ok, b_ok = a != IGNORE, b != IGNORE
                fused[has, d] = np.where(
                    a_ok & b_ok, (a + b) / 2.0, np.where(a_ok, a, np.where(b_ok, b, np.nan))
                )
            self.nbr.append(np.ascontiguousarray(nbr))
            self.fused.append(fused)


def _pair_score(field: AffinityField, scale: int, p, q) -> float | None:
    d = int(np.flatnonzero(np.all(DIRECTIONS == np.subtract(q, p), axis=1))[0])
    a = field.score(scale, p, d)
    b = field.score(scale, q, int(OPPOSITE[d]))
    vals = [x for x in (a, b) if x != IGNORE]
    if not vals:
        return None
    return (a + b) / 2.0 if len(vals) == 2 else vals[0]


def node_affinity(a: ClusterNode, b: ClusterNode, field: AffinityField) -> float:
    """Affinity between two nodes from their voxel occupancies.

    Direct (slow) evaluation over explicit voxel pairs; the clustering loop
    uses the equivalent batched kernels.
    """
    scale_means = []
    for s in range(field.num_scales):
        scores = [
            v for p, q in neighbor_pairs(a.occupancy, b.occupancy, s)
            if (v := _pair_score(field, s, p, q)) is not None
        ]
        if scores:
            scale_means.append(sum(scores) / len(scores))
    return sum(scale_means) / len(scale_means) if scale_means else 0.0


def edge_affinities(graph: ClusterGraph, tables: FieldTables, threads: int = 1, backend=None) -> np.ndarray:
    """Affinity of every edge in ``graph.edges``."""
    k = kernels.get(backend)
    E = graph.num_edges
    ea = np.ascontiguousarray(graph.edges[:, 0])
    eb = np.ascontiguousarray(graph.edges[:, 1])
    total = np.zeros(E)
    nscales = np.zeros(E, dtype=np.int64)
    for s in range(graph.grid.num_scales):
        node_ptr, node_vox, vox_ptr, vox_node = graph.occupied_csr(s)
        sums, counts = k.edge_pair_sums(
            ea, eb, node_ptr, node_vox, vox_ptr, vox_node, tables.nbr[s], tables.fused[s], threads
        )
        ok = counts > 0
        total[ok] += sums[ok] / counts[ok]
        nscales += ok
    return np.where(nscales > 0, total / np.maximum(nscales, 1), 0.0)


def mapping_targets(graph: ClusterGraph, tables: FieldTables, threads: int = 1, backend=None) -> np.ndarray:
    """Dense index of M(v) for every node v."""
    aff = edge_affinities(graph, tables, threads, backend)
    return kernels.get(backend).best_neighbors(
        graph.num_nodes,
        np.ascontiguousarray(graph.edges[:, 0]),
        np.ascontiguousarray(graph.edges[:, 1]),
        aff,
        MERGE_THRESHOLD,
    )


def compute_mapping(graph: ClusterGraph, field: AffinityField, threads: int = 1, backend=None) -> dict[int, int]:
    """Map each node id to its best neighbour's id (or itself)."""
    t = mapping_targets(graph, FieldTables(graph.grid, field), threads, backend)
    return dict(zip(graph.ids.tolist(), graph.ids[t].tolist()))


def _contract(graph: ClusterGraph, targets: np.ndarray, backend=None) -> ClusterGraph:
    n = graph.num_nodes
    roots = kernels.get(backend).components(n, np.arange(n, dtype=np.int64), targets)
    uniq, new_index = np.unique(roots, return_inverse=True)
    new_index = new_index.reshape(-1)
    m = len(uniq)
    occ = []
    for s, (node, vox, cnt) in enumerate(graph.occ):
        nv = graph.grid.num_voxels(s)
        key = new_index[node] * nv + vox
        k, inv = np.unique(key, return_inverse=True)
        summed = np.bincount(inv.reshape(-1), weights=cnt, minlength=len(k)).astype(np.int64)
        occ.append((k // nv, k % nv, summed))
    return ClusterGraph(
        graph.grid,
        new_index[graph.node_of],
        graph.ids[uniq],
        canonical_edges(new_index[graph.edges], m),
        occ,
    )


def contract(graph: ClusterGraph, mapping, backend=None) -> ClusterGraph:
    """Merge the components of the mapping graph into single nodes.

    ``mapping`` is either a dict of node id -> node id or an array of dense
    target indices.
    """
    if isinstance(mapping, dict):
        ids = graph.ids
        tgt = np.array([mapping.get(int(i), int(i)) for i in ids], dtype=np.int64)
        targets = np.searchsorted(ids, tgt)
        if np.any(targets >= len(ids)) or np.any(ids[np.minimum(targets, len(ids) - 1)] != tgt):
            raise ValueError("mapping refers to an unknown node id")
    else:
        targets = np.asarray(mapping, dtype=np.int64)
    return _contract(graph, targets, backend)


def cluster(
    mesh: Mesh,
    grid: SparseVoxelGrid,
    field: AffinityField,
    *,
    threads: int = 1,
    backend=None,
    on_iteration: Callable[[IterationStats, ClusterGraph], None] | None = None,
    graph: ClusterGraph | None = None,
) -> ClusterGraph:
    """Contract until every node maps to itself; returns the final graph.

    ``graph`` overrides the initial one-point-per-node graph built from
    ``mesh``. ``on_iteration`` is called after each contraction.
    """
    if graph is None:
        graph = ClusterGraph.from_mesh(mesh, grid)
    tables = FieldTables(grid, field)
    iteration = 0
    while True:
        targets = mapping_targets(graph, tables, threads, backend)
        if np.all(targets == np.arange(graph.num_nodes)):
            return graph
        before = graph.num_nodes
        graph = _contract(graph, targets, backend)
        iteration += 1
        if on_iteration is not None:
            on_iteration(IterationStats(iteration, graph.num_nodes, graph.num_edges, before - graph.num_nodes), graph)


__all__ = [
    "ClusterNode", "ClusterGraph", "FieldTables", "IterationStats", "node_affinity",
    "edge_affinities", "compute_mapping", "contract", "cluster", "MERGE_THRESHOLD",
]
