"""Sample extra points inside large triangles and wire them into the graph.

Random numbers come from SplitMix64 evaluated at a counter, so every draw is
a pure function of ``(seed, triangle index, sample index, component)``.
Triangles can be processed in any order or in parallel and produce the same
output on every platform.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mesh_io import Mesh, canonical_edges
from .errors import ValidationError
from .voxel_grid import GridSpec

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 output function; arithmetic wraps modulo 2**64."""
    with np.errstate(over="ignore"):
        z = np.asarray(x, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def triangle_uniforms(seed: int, triangles: np.ndarray, samples: int) -> np.ndarray:
    """``(len(triangles), samples, 2)`` uniforms in [0, 1).

    Stream for triangle ``t`` starts at counter ``t * 2 * samples``; the
    seed is first whitened so nearby seeds give unrelated streams.
    """
    t = np.asarray(triangles, dtype=np.uint64)
    key = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    counter = (
        t[:, None, None] * np.uint64(2 * samples)
        + np.arange(samples, dtype=np.uint64)[None, :, None] * np.uint64(2)
        + np.arange(2, dtype=np.uint64)[None, None, :]
    )
    bits = splitmix64(counter ^ key)
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class DensifyConfig:
    samples_per_triangle: int = 5
    min_span_voxels: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.samples_per_triangle < 0:
            raise ValidationError("samples_per_triangle must be >= 0")
        if self.min_span_voxels < 1:
            raise ValidationError("min_span_voxels must be >= 1")

    def comment(self) -> str:
        return (
            f"densify seed={self.rng_seed} samples_per_triangle={self.samples_per_triangle} "
            f"min_span_voxels={self.min_span_voxels}"
        )


def qualifying_triangles(mesh: Mesh, spec: GridSpec, min_span_voxels: int) -> np.ndarray:
    """Indices of triangles whose corner voxels cover >= ``min_span_voxels`` along some axis."""
    spec = spec.resolve_origin(mesh.positions)
    c = spec.coords0(mesh.positions)[mesh.triangles]  # (T, 3 corners, 3 axes)
    span = c.max(axis=1) - c.min(axis=1) + 1
    return np.flatnonzero(np.any(span >= min_span_voxels, axis=1))


def _sample(mesh: Mesh, spec: GridSpec, cfg: DensifyConfig, tris: np.ndarray):
    """Samples for one batch of triangle indices; depends only on the indices."""
    k = cfg.samples_per_triangle
    corners = mesh.triangles[tris]  # (Q, 3)
    u = triangle_uniforms(cfg.rng_seed, tris, k)
    a, b = u[..., 0], u[..., 1]
    fold = a + b > 1.0
    a = np.where(fold, 1.0 - a, a)
    b = np.where(fold, 1.0 - b, b)
    w = np.stack([1.0 - a - b, a, b], axis=-1)  # (Q, k, 3) barycentric weights

    p = mesh.positions[corners]  # (Q, 3, 3)
    pos = np.einsum("qkc,qcd->qkd", w, p)
    col = np.einsum("qkc,qcd->qkd", w, mesh.colors[corners])
    face = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    nrm = np.linalg.norm(face, axis=1)
    interp = np.einsum("qkc,qcd->qkd", w, mesh.normals[corners])
    normal = np.where((nrm > 0)[:, None, None], (face / np.where(nrm > 0, nrm, 1.0)[:, None])[:, None, :], interp)

    # nearest original corner per sample, ties to the lowest vertex index
    d2 = ((pos[:, :, None, :] - p[:, None, :, :]) ** 2).sum(-1)  # (Q, k, 3)
    cid = np.broadcast_to(corners[:, None, :], d2.shape)
    order = np.lexsort((cid, d2), axis=-1)[..., 0]
    nearest = np.take_along_axis(cid, order[..., None], axis=-1)[..., 0]  # (Q, k)
    vox = spec.coords0(pos.reshape(-1, 3)).reshape(len(tris), k, 3)
    return pos, col, normal, nearest, vox


def densify(mesh: Mesh, spec: GridSpec, cfg: DensifyConfig = DensifyConfig(), threads: int = 1) -> Mesh:
    """Append ``cfg.samples_per_triangle`` points to every qualifying triangle.

    With ``threads > 1`` triangle batches are sampled concurrently; the
    result is bit-identical to the single-threaded one.
    """
    spec = spec.resolve_origin(mesh.positions)
    k = cfg.samples_per_triangle
    tris = qualifying_triangles(mesh, spec, cfg.min_span_voxels) if k else np.zeros(0, np.int64)
    if len(tris) == 0:
        return mesh

    batches = np.array_split(tris, max(1, min(threads, len(tris))))
    if len(batches) == 1:
        parts = [_sample(mesh, spec, cfg, tris)]
    else:
        with ThreadPoolExecutor(max_workers=len(batches)) as pool:
            parts = list(pool.map(lambda t: _sample(mesh, spec, cfg, t), batches))
    pos, col, normal, nearest, vox = (np.concatenate(x) for x in zip(*parts))

    n0 = mesh.num_vertices
    q = len(tris)
    new_ids = n0 + np.arange(q * k, dtype=np.int64).reshape(q, k)
    edges = [np.stack([new_ids.ravel(), nearest.ravel()], axis=1)]

    # sample-sample edges within one triangle: same or 6-adjacent scale-0 voxel
    for i in range(k):
        for j in range(i + 1, k):
            manhattan = np.abs(vox[:, i] - vox[:, j]).sum(axis=1)
            hit = manhattan <= 1
            edges.append(np.stack([new_ids[hit, i], new_ids[hit, j]], axis=1))

    positions = np.concatenate([mesh.positions, pos.reshape(-1, 3)])
    colors = np.concatenate([mesh.colors, col.reshape(-1, 3)])
    normals = np.concatenate([mesh.normals, normal.reshape(-1, 3)])
    sampled = np.concatenate([mesh.sampled, np.ones(q * k, dtype=bool)])
    semantic = instance = None
    if mesh.semantic is not None:
        semantic = np.concatenate([mesh.semantic, mesh.semantic[nearest.ravel()]])
    if mesh.instance is not None:
        instance = np.concatenate([mesh.instance, mesh.instance[nearest.ravel()]])
    all_edges = canonical_edges(np.concatenate([mesh.edges] + edges), len(positions))
    return Mesh(
        positions=positions,
        triangles=mesh.triangles.copy(),
        colors=colors,
        normals=normals,
        edges=all_edges,
        sampled=sampled,
        semantic=semantic,
        instance=instance,
        comments=list(mesh.comments) + [cfg.comment()],
    )


def barycentric(points, triangle) -> np.ndarray:
    """Barycentric coordinates of ``points`` w.r.t. the 3x3 ``triangle``."""
    a, b, c = np.asarray(triangle, dtype=np.float64)
    v0, v1 = b - a, c - a
    v2 = np.asarray(points, dtype=np.float64) - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    return np.stack([1.0 - v - w, v, w], axis=-1)
