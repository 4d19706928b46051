"""Sparse multi-scale voxelization.

Voxel coordinates are packed into one int64 key (16 bits per axis, x in the
low bits), which keeps every per-scale table a sorted key array plus
parallel data arrays.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import OutOfExtentError, ValidationError

AXES = "xyz"
BOUNDARY_TOLERANCE = 1e-9  # in voxels
# order matches the affinity layout: -x, +x, -y, +y, -z, +z
DIRECTIONS = np.array(
    [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)], dtype=np.int64
)
OPPOSITE = np.array([1, 0, 3, 2, 5, 4])
_MASK = np.int64(0xFFFF)


def pack(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=np.int64)
    return c[..., 0] | (c[..., 1] << 16) | (c[..., 2] << 32)


def unpack(keys) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64)
    return np.stack([k & _MASK, (k >> 16) & _MASK, (k >> 32) & _MASK], axis=-1)


def occupancy_threshold(scale: int) -> int:
    """Minimum point count for a node to occupy a voxel at ``scale``."""
    return 4**scale


@dataclass(frozen=True)
class GridSpec:
    voxel_size: float = 0.02
    extent: int = 4096
    num_scales: int = 2
    origin: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValidationError(f"voxel_size must be positive, got {self.voxel_size}")
        if self.extent < 1 or self.extent & (self.extent - 1) or self.extent > 1 << 16:
            raise ValidationError(f"extent must be a power of two <= 65536, got {self.extent}")
        if self.num_scales < 1 or 1 << (self.num_scales - 1) > self.extent:
            raise ValidationError(f"num_scales must be in [1, log2(extent)+1], got {self.num_scales}")
        if self.origin is not None:
            object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    def scale_extent(self, scale: int) -> int:
        return self.extent >> scale

    def resolve_origin(self, positions) -> "GridSpec":
        """Fix the origin at the min corner minus one voxel when unset."""
        if self.origin is not None:
            return self
        positions = np.asarray(positions, dtype=np.float64)
        lo = positions.min(axis=0) if len(positions) else np.zeros(3)
        return replace(self, origin=tuple(lo - self.voxel_size))

    def coords0(self, positions) -> np.ndarray:
        """Scale-0 integer coordinates; raises if any point leaves the extent."""
        if self.origin is None:
            raise ValidationError("grid origin is unresolved")
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        q = (positions - np.asarray(self.origin)) / self.voxel_size
        # a point on a boundary belongs to the upper voxel even when rounding
        # left its quotient a hair below the integer
        r = np.rint(q)
        c = np.floor(np.where(np.abs(q - r) <= BOUNDARY_TOLERANCE, r, q))
        for ax in range(3):
            if len(c) and (c[:, ax].min() < 0 or c[:, ax].max() >= self.extent):
                span = positions[:, ax].max() - positions[:, ax].min()
                raise OutOfExtentError(
                    f"scene spans {span:.3f} m along {AXES[ax]}, grid covers "
                    f"{self.extent * self.voxel_size:.3f} m",
                    axis=AXES[ax],
                )
        return c.astype(np.int64)


class SparseVoxelGrid:
    """Per-scale assignment of points to voxels.

    For scale ``s``, ``keys[s]`` is the sorted array of occupied voxel keys
    and ``point_voxel[s][i]`` indexes into it for point ``i``.
    """

    def __init__(self, spec: GridSpec, coords0: np.ndarray):
        self.spec = spec
        self.coords0 = np.asarray(coords0, dtype=np.int64)
        self.keys: list[np.ndarray] = []
        self.point_voxel: list[np.ndarray] = []
        for s in range(spec.num_scales):
            k, inv = np.unique(pack(self.coords0 >> s), return_inverse=True)
            self.keys.append(k)
            self.point_voxel.append(inv.reshape(-1).astype(np.int64))
        self._neighbors: dict[int, np.ndarray] = {}

    @property
    def num_points(self) -> int:
        return len(self.coords0)

    @property
    def num_scales(self) -> int:
        return self.spec.num_scales

    def num_voxels(self, scale: int) -> int:
        return len(self.keys[scale])

    def coords(self, scale: int) -> np.ndarray:
        return unpack(self.keys[scale])

    def counts(self, scale: int) -> np.ndarray:
        return np.bincount(self.point_voxel[scale], minlength=self.num_voxels(scale))

    def voxel_index(self, scale: int, coord) -> int:
        """Index of ``coord`` at ``scale``, or -1 if empty."""
        key = pack(coord)
        keys = self.keys[scale]
        i = int(np.searchsorted(keys, key))
        return i if i < len(keys) and keys[i] == key else -1

    def lookup(self, scale: int, keys) -> np.ndarray:
        """Vectorised :meth:`voxel_index` over packed keys."""
        table = self.keys[scale]
        keys = np.asarray(keys, dtype=np.int64)
        i = np.searchsorted(table, keys)
        i = np.minimum(i, max(len(table) - 1, 0))
        hit = (table[i] == keys) if len(table) else np.zeros(keys.shape, bool)
        return np.where(hit, i, -1)

    def points_in(self, scale: int, coord) -> np.ndarray:
        v = self.voxel_index(scale, coord)
        if v < 0:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.point_voxel[scale] == v)

    def voxel_points(self, scale: int) -> dict[tuple[int, int, int], list[int]]:
        """Map from voxel coordinate to contained point indices."""
        order = np.argsort(self.point_voxel[scale], kind="stable")
        bounds = np.cumsum(self.counts(scale))[:-1]
        groups = np.split(order, bounds)
        return {tuple(int(x) for x in c): g.tolist() for c, g in zip(self.coords(scale), groups)}

    def neighbors(self, scale: int) -> np.ndarray:
        """``(V, 6)`` voxel indices of the 6-neighbours, -1 where empty."""
        if scale not in self._neighbors:
            coords = self.coords(scale)
            ext = self.spec.scale_extent(scale)
            out = np.full((len(coords), 6), -1, dtype=np.int64)
            for d, off in enumerate(DIRECTIONS):
                nc = coords + off
                inside = np.all((nc >= 0) & (nc < ext), axis=1)
                out[inside, d] = self.lookup(scale, pack(nc[inside]))
            self._neighbors[scale] = out
        return self._neighbors[scale]

    def dump(self, path) -> None:
        """Write ``<scale> <i> <j> <k> <count>`` per occupied voxel."""
        with open(path, "w") as fh:
            for s in range(self.num_scales):
                table = np.column_stack(
                    [np.full(self.num_voxels(s), s), self.coords(s), self.counts(s)]
                )
                np.savetxt(fh, table, fmt="%d")


def voxelize(mesh_or_positions, spec: GridSpec | None = None) -> SparseVoxelGrid:
    positions = getattr(mesh_or_positions, "positions", mesh_or_positions)
    spec = (spec or GridSpec()).resolve_origin(positions)
    return SparseVoxelGrid(spec, spec.coords0(positions))


@dataclass
class OccupancyCounts:
    """Per-scale voxel -> point count for one node."""

    counts: list[Counter] = field(default_factory=list)

    def occupied(self, scale: int) -> set[tuple[int, int, int]]:
        t = occupancy_threshold(scale)
        return {v for v, c in self.counts[scale].items() if c >= t}

    def total(self, scale: int) -> int:
        return sum(self.counts[scale].values())

    def __add__(self, other: "OccupancyCounts") -> "OccupancyCounts":
        if len(self.counts) != len(other.counts):
            raise ValueError("occupancy counts built for different scale counts")
        return OccupancyCounts([a + b for a, b in zip(self.counts, other.counts)])

    def __eq__(self, other):
        if not isinstance(other, OccupancyCounts):
            return NotImplemented
        return [dict(c) for c in self.counts] == [dict(c) for c in other.counts]


def occupancy(points, grid: SparseVoxelGrid) -> OccupancyCounts:
    idx = np.asarray(sorted(set(int(p) for p in points)), dtype=np.int64)
    per_scale = []
    for s in range(grid.num_scales):
        vox, cnt = np.unique(grid.point_voxel[s][idx], return_counts=True)
        coords = unpack(grid.keys[s][vox])
        per_scale.append(Counter({tuple(int(x) for x in c): int(n) for c, n in zip(coords, cnt)}))
    return OccupancyCounts(per_scale)


def neighbor_pairs(occ_a: OccupancyCounts, occ_b: OccupancyCounts, scale: int):
    """6-adjacent ``(p, q)`` with ``p`` occupied by ``a`` and ``q`` by ``b``."""
    qs = occ_b.occupied(scale)
    pairs = []
    for p in sorted(occ_a.occupied(scale)):
        for off in DIRECTIONS:
            q = (p[0] + int(off[0]), p[1] + int(off[1]), p[2] + int(off[2]))
            if q in qs:
                pairs.append((p, q))
    return sorted(pairs)


__all__ = [
    "GridSpec", "SparseVoxelGrid", "OccupancyCounts", "voxelize", "occupancy",
    "neighbor_pairs", "occupancy_threshold", "pack", "unpack", "DIRECTIONS", "OPPOSITE",
]
