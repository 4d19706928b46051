"""Procedural labelled scenes: axis-aligned boxes and planes on a voxel lattice.

Vertices sit at voxel centres, one per scale-0 voxel, and object bounding
boxes are kept at least ``gap`` empty voxels apart along some axis, so no
2x2x2 block ever mixes two instances.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh_io import Mesh
from .voxel_grid import GridSpec

BOX_CLASSES = (3, 4, 5, 6, 7, 10, 12, 14, 24, 33, 39)
PLANE_CLASSES = (8, 9, 11, 16, 28)


@dataclass
class Scene:
    mesh: Mesh
    spec: GridSpec

    @property
    def labels(self):
        return self.mesh.label_set()


def _grid_triangles(idx: np.ndarray) -> np.ndarray:
    """Two triangles per cell of a 2D array of vertex indices."""
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    return np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])


def box_surface(dims) -> tuple[np.ndarray, np.ndarray]:
    """Lattice points on the surface of a box of ``dims`` points, plus triangles."""
    nx, ny, nz = (int(v) for v in dims)
    grid = np.full((nx, ny, nz), -1, dtype=np.int64)
    shell = np.zeros((nx, ny, nz), dtype=bool)
    shell[[0, -1], :, :] = True
    shell[:, [0, -1], :] = True
    shell[:, :, [0, -1]] = True
    pts = np.argwhere(shell)
    grid[tuple(pts.T)] = np.arange(len(pts))
    faces = [grid[0], grid[-1], grid[:, 0], grid[:, -1], grid[:, :, 0], grid[:, :, -1]]
    tris = np.concatenate([_grid_triangles(f) for f in faces if min(f.shape) > 1])
    return pts, tris


def plane_surface(dims, axis: int) -> tuple[np.ndarray, np.ndarray]:
    a, b = (int(v) for v in dims)
    ii, jj = np.meshgrid(np.arange(a), np.arange(b), indexing="ij")
    uv = np.stack([ii.ravel(), jj.ravel()], 1)
    pts = np.insert(uv, axis, 0, axis=1)
    idx = np.arange(a * b).reshape(a, b)
    return pts, _grid_triangles(idx)


def _box_dims_for(points: int, rng) -> np.ndarray:
    # surface of an s*s*s box has about 6 s^2 points
    s = max(3.0, np.sqrt(points / 6.0))
    dims = np.maximum(3, np.rint(s * rng.uniform(0.7, 1.3, size=3))).astype(int)
    return dims


def make_scene(
    seed: int,
    num_instances: int = 5,
    target_points: int = 5000,
    *,
    gap: int = 1,
    voxel_size: float = 0.02,
    extent: int = 4096,
    num_scales: int = 2,
    plane_fraction: float = 0.3,
) -> Scene:
    """Random scene with ``num_instances`` objects and roughly ``target_points`` vertices."""
    rng = np.random.default_rng(seed)
    per = max(target_points // max(num_instances, 1), 9)
    objects = []
    for _ in range(num_instances):
        if rng.random() < plane_fraction:
            side = max(3, int(np.sqrt(per)))
            dims = np.maximum(3, np.rint(side * rng.uniform(0.7, 1.3, size=2))).astype(int)
            pts, tris = plane_surface(dims, int(rng.integers(3)))
            cls = int(rng.choice(PLANE_CLASSES))
        else:
            pts, tris = box_surface(_box_dims_for(per, rng))
            cls = int(rng.choice(BOX_CLASSES))
        objects.append((pts, tris, cls))

    # shelf packing along x, random offsets in y/z, gaps of >= `gap` empty voxels
    placed = []
    cursor = 1 + gap
    for pts, tris, cls in objects:
        size = pts.max(axis=0) + 1
        stack = placed and rng.random() < 0.3
        if stack:
            # put it above the previous object, separated along z instead
            prev_lo, prev_hi = placed[-1]
            lo = np.array([prev_lo[0], prev_lo[1], prev_hi[2] + 1 + gap + int(rng.integers(0, 2))])
        else:
            lo = np.array([cursor, 1 + gap + int(rng.integers(0, 4)), 1 + gap + int(rng.integers(0, 4))])
        hi = lo + size - 1
        placed.append((lo, hi))
        cursor = max(cursor, int(hi[0]) + 1 + gap + int(rng.integers(0, 3)))

    positions, triangles, semantic, instance = [], [], [], []
    offset = 0
    for k, ((pts, tris, cls), (lo, _)) in enumerate(zip(objects, placed), start=1):
        lattice = pts + lo
        positions.append((lattice + 0.5) * voxel_size)
        triangles.append(tris + offset)
        semantic.append(np.full(len(pts), cls))
        instance.append(np.full(len(pts), k))
        offset += len(pts)
    mesh = Mesh.from_arrays(
        np.concatenate(positions),
        np.concatenate(triangles),
        semantic=np.concatenate(semantic),
        instance=np.concatenate(instance),
    )
    spec = GridSpec(voxel_size, extent, num_scales, origin=(0.0, 0.0, 0.0))
    return Scene(mesh, spec)
