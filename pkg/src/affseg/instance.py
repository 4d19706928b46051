"""Turn final clusters into labelled, scored instances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .affinity import AffinityField
from .classes import ClassTable
from .cluster import MERGE_THRESHOLD, ClusterGraph, FieldTables
from .errors import AlignmentError
from .mesh_io import Mesh
from .segmentation import Instance, InstanceSegmentation


@dataclass(frozen=True)
class InstanceConfig:
    min_instance_points: int = 10
    min_planar_points: int = 100
    planar_confidence: float = 0.5


def modal_classes(node_of: np.ndarray, semantics: np.ndarray, num_nodes: int):
    """Per node: most frequent class (ties to the smaller id) and member count."""
    classes, crank = np.unique(semantics, return_inverse=True)
    nc = max(len(classes), 1)
    key = node_of * nc + crank.reshape(-1)
    k, cnt = np.unique(key, return_counts=True)
    node, cls = k // nc, k % nc
    order = np.lexsort((cls, -cnt, node))
    node, cls = node[order], cls[order]
    first = np.ones(len(node), dtype=bool)
    first[1:] = node[1:] != node[:-1]
    modal = np.full(num_nodes, -1, dtype=np.int64)
    modal[node[first]] = classes[cls[first]] if len(classes) else -1
    return modal, np.bincount(node_of, minlength=num_nodes)


def internal_agreement(graph: ClusterGraph, tables: FieldTables) -> np.ndarray:
    """Per node: fraction of its internal scale-0 voxel pairs scoring > 0.5.

    Nodes with no scored internal pair get 1.0.
    """
    node, vox, _ = graph.occ[0]
    nv = graph.grid.num_voxels(0)
    keys = node * nv + vox
    nbr, fused = tables.nbr[0], tables.fused[0]
    total = np.zeros(graph.num_nodes, dtype=np.int64)
    agree = np.zeros(graph.num_nodes, dtype=np.int64)
    for d in (1, 3, 5):
        u = nbr[vox, d]
        f = fused[vox, d]
        cand = (u >= 0) & ~np.isnan(f)
        q = node[cand] * nv + u[cand]
        pos = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
        inside = keys[pos] == q
        owner = node[cand][inside]
        total += np.bincount(owner, minlength=graph.num_nodes)
        agree += np.bincount(owner[f[cand][inside] > MERGE_THRESHOLD], minlength=graph.num_nodes)
    return np.where(total > 0, agree / np.maximum(total, 1), 1.0)


def assemble(
    graph: ClusterGraph,
    semantics,
    field: AffinityField,
    classes: ClassTable | None = None,
    cfg: InstanceConfig = InstanceConfig(),
) -> InstanceSegmentation:
    """One instance per cluster with enough original vertices and an instance class.

    ``semantics`` covers the original vertices, which are the first
    ``len(semantics)`` points of the graph; later (sampled) points vote for
    nothing and never appear in the output.
    """
    classes = classes or ClassTable.default()
    semantics = np.asarray(semantics, dtype=np.int64)
    n = len(semantics)
    if n > graph.grid.num_points:
        raise AlignmentError(f"{n} semantic records for {graph.grid.num_points} points")
    node_of = graph.node_of[:n]
    modal, size = modal_classes(node_of, semantics, graph.num_nodes)
    conf = internal_agreement(graph, FieldTables(graph.grid, field))
    keep = [
        i for i in range(graph.num_nodes)
        if size[i] >= cfg.min_instance_points and classes.is_instance(int(modal[i]))
    ]
    point_instance = np.zeros(n, dtype=np.int64)
    order = np.argsort(node_of, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(size)])
    instances = []
    for new_id, i in enumerate(keep, start=1):
        members = order[bounds[i]:bounds[i + 1]]
        point_instance[members] = new_id
        instances.append(Instance(new_id, int(modal[i]), float(conf[i]), members))
    return InstanceSegmentation(point_instance, instances)


def add_planar_components(
    seg: InstanceSegmentation,
    semantics,
    mesh: Mesh,
    classes: ClassTable | None = None,
    cfg: InstanceConfig = InstanceConfig(),
    backend=None,
) -> InstanceSegmentation:
    """Append connected components of planar-class vertices as extra instances.

    Components are taken over mesh edges between original vertices that
    share the planar class. Existing instances keep their members; the
    per-vertex id column is overwritten by the new instance.
    """
    classes = classes or ClassTable.default()
    planar = classes.planar_ids()
    semantics = np.asarray(semantics, dtype=np.int64)
    n = len(semantics)
    if n != seg.num_points:
        raise AlignmentError(f"{n} semantic records for {seg.num_points} segmented vertices")
    e = mesh.edges
    e = e[(e[:, 0] < n) & (e[:, 1] < n)]
    point_instance = seg.point_instance.copy()
    instances = list(seg.instances)
    next_id = max((i.id for i in instances), default=0) + 1
    k = kernels.get(backend)
    for cid in sorted(planar):
        mask = semantics == cid
        if not np.any(mask):
            continue
        sub = e[mask[e[:, 0]] & mask[e[:, 1]]]
        roots = k.components(n, np.ascontiguousarray(sub[:, 0]), np.ascontiguousarray(sub[:, 1]))
        roots = roots[mask]
        verts = np.flatnonzero(mask)
        uniq, inv, cnt = np.unique(roots, return_inverse=True, return_counts=True)
        for j in np.flatnonzero(cnt >= cfg.min_planar_points):
            members = verts[inv.reshape(-1) == j]
            point_instance[members] = next_id
            instances.append(Instance(next_id, int(cid), cfg.planar_confidence, members))
            next_id += 1
    return InstanceSegmentation(point_instance, instances)
