"""Multi-scale 6-neighbour affinity fields.

A field stores, per scale, a sorted array of voxel keys and a ``(M, 6)``
score table in direction order -x, +x, -y, +y, -z, +z. ``IGNORE`` (-1)
marks slots with no valid score.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .mesh_io import LabelSet
from .voxel_grid import GridSpec, SparseVoxelGrid, occupancy_threshold, pack, unpack

IGNORE = -1.0
FORMAT_VERSION = 1


@dataclass
class AffinityField:
    spec: GridSpec
    keys: list[np.ndarray]
    scores: list[np.ndarray]

    def __post_init__(self):
        if len(self.keys) != self.spec.num_scales or len(self.scores) != self.spec.num_scales:
            raise ValidationError("field needs one table per scale")
        for k, s in zip(self.keys, self.scores):
            if s.shape != (len(k), 6):
                raise ValidationError("score table shape does not match key count")
            if len(k) > 1 and np.any(np.diff(k) <= 0):
                raise ValidationError("field keys must be strictly increasing")
            bad = ~((s == IGNORE) | ((s >= 0.0) & (s <= 1.0)))
            if np.any(bad):
                raise ValidationError(f"score {s[bad][0]} outside [0, 1]")

    @property
    def num_scales(self) -> int:
        return self.spec.num_scales

    def get(self, scale: int, coord) -> np.ndarray | None:
        keys = self.keys[scale]
        key = pack(coord)
        i = int(np.searchsorted(keys, key))
        if i < len(keys) and keys[i] == key:
            return self.scores[scale][i]
        return None

    def score(self, scale: int, coord, direction: int) -> float:
        row = self.get(scale, coord)
        return IGNORE if row is None else float(row[direction])

    def rows_for(self, grid: SparseVoxelGrid, scale: int) -> np.ndarray:
        """``(V, 6)`` scores aligned to ``grid`` voxels; missing voxels are IGNORE."""
        out = np.full((grid.num_voxels(scale), 6), IGNORE)
        keys = self.keys[scale]
        if len(keys):
            gk = grid.keys[scale]
            i = np.minimum(np.searchsorted(keys, gk), len(keys) - 1)
            hit = keys[i] == gk
            out[hit] = self.scores[scale][i[hit]]
        return out

    def quantized(self) -> "AffinityField":
        """Scores rounded to the 6 decimals used by the file format."""
        return AffinityField(
            self.spec, [k.copy() for k in self.keys],
            [np.where(s == IGNORE, IGNORE, np.round(s, 6)) for s in self.scores],
        )

    def __eq__(self, other):
        if not isinstance(other, AffinityField):
            return NotImplemented
        return (
            self.spec.voxel_size == other.spec.voxel_size
            and self.spec.extent == other.spec.extent
            and self.num_scales == other.num_scales
            and all(np.array_equal(a, b) for a, b in zip(self.keys, other.keys))
            and all(np.allclose(a, b, atol=1e-6, rtol=0) for a, b in zip(self.scores, other.scores))
        )


def _distribution_ids(voxel: np.ndarray, instance: np.ndarray, num_voxels: int) -> np.ndarray:
    """Integer id per voxel; equal ids <=> equal normalised instance histograms.

    Single-instance voxels use the instance rank directly. Mixed voxels are
    reduced by the gcd of their counts, which makes proportional histograms
    identical integer tuples.
    """
    inst_vals, inst_rank = np.unique(instance, return_inverse=True)
    ninst = len(inst_vals)
    key = voxel.astype(np.int64) * ninst + inst_rank.reshape(-1)
    pk, cnt = np.unique(key, return_counts=True)
    pv, pi = pk // ninst, pk % ninst
    distinct = np.bincount(pv, minlength=num_voxels)
    ids = np.full(num_voxels, -1, dtype=np.int64)
    single = distinct[pv] == 1
    ids[pv[single]] = pi[single]
    mixed = np.flatnonzero(distinct > 1)
    if len(mixed):
        starts = np.searchsorted(pv, mixed)
        table: dict[tuple, int] = {}
        for v, s in zip(mixed.tolist(), starts.tolist()):
            e = s + int(distinct[v])
            c = cnt[s:e]
            g = math.gcd(*c.tolist())
            sig = tuple(zip(pi[s:e].tolist(), (c // g).tolist()))
            ids[v] = ninst + table.setdefault(sig, len(table))
    return ids


def generate_supervision(grid: SparseVoxelGrid, labels) -> AffinityField:
    """Binary ground-truth affinity from per-point instance labels.

    A 6-adjacent pair scores 1 when both voxels hold at least ``4**s`` points
    and their instance histograms are proportional, 0 when the histograms
    differ. Pairs below the count threshold, or touching an unannotated
    point (instance 0), are IGNORE.
    """
    instance = labels.instance if isinstance(labels, LabelSet) else np.asarray(labels)
    if len(instance) != grid.num_points:
        raise ValidationError(f"{len(instance)} labels for {grid.num_points} grid points")
    keys, scores = [], []
    for s in range(grid.num_scales):
        pv = grid.point_voxel[s]
        nv = grid.num_voxels(s)
        total = np.bincount(pv, minlength=nv)
        unannotated = np.bincount(pv[instance == 0], minlength=nv) > 0
        valid = (total >= occupancy_threshold(s)) & ~unannotated
        dist = _distribution_ids(pv, instance, nv)
        nbr = grid.neighbors(s)
        table = np.full((nv, 6), IGNORE)
        for d in (1, 3, 5):
            v = np.flatnonzero(nbr[:, d] >= 0)
            u = nbr[v, d]
            ok = valid[v] & valid[u]
            val = np.where(ok, (dist[v] == dist[u]).astype(np.float64), IGNORE)
            table[v, d] = val
            table[u, d - 1] = val
        keys.append(grid.keys[s].copy())
        scores.append(table)
    return AffinityField(grid.spec, keys, scores)


@dataclass(frozen=True)
class OracleConfig:
    flip_probability: float = 0.0
    jitter_stddev: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValidationError("flip_probability must be in [0, 1]")
        if not self.jitter_stddev >= 0.0:
            raise ValidationError("jitter_stddev must be >= 0")


def generate_oracle(grid: SparseVoxelGrid, labels, cfg: OracleConfig = OracleConfig()) -> AffinityField:
    """Noisy stand-in for a predicted field, derived from supervision.

    Noise is drawn once per unordered voxel pair, in a fixed order (scale,
    then +x/+y/+z, then voxel index), so both directed slots of a pair stay
    equal and the result depends only on the seed.
    """
    sup = generate_supervision(grid, labels)
    rng = np.random.Generator(np.random.PCG64(cfg.rng_seed))
    scores = []
    for s in range(grid.num_scales):
        table = sup.scores[s].copy()
        nbr = grid.neighbors(s)
        for d in (1, 3, 5):
            v = np.flatnonzero(nbr[:, d] >= 0)
            flip = rng.random(len(v)) < cfg.flip_probability
            noise = rng.standard_normal(len(v)) * cfg.jitter_stddev
            val = table[v, d]
            known = val != IGNORE
            new = np.where(flip, 1.0 - val, val) + noise
            new = np.clip(new, 0.0, 1.0)
            val = np.where(known, new, 0.5)
            table[v, d] = val
            table[nbr[v, d], d - 1] = val
        table[table == IGNORE] = 0.5
        scores.append(table)
    return AffinityField(grid.spec, [k.copy() for k in sup.keys], scores)


# ---------------------------------------------------------------- file format

_HEADER = re.compile(r"#\s*voxel_size=(\S+)\s+extent=(\d+)\s+scales=(\d+)")


def write_field(path, field: AffinityField) -> None:
    spec = field.spec
    with open(path, "w") as fh:
        fh.write(f"# voxel_size={spec.voxel_size!r} extent={spec.extent} scales={spec.num_scales}\n")
        for s in range(field.num_scales):
            c = unpack(field.keys[s])
            sc = field.scores[s]
            ign = sc == IGNORE
            body = np.char.mod("%.6f", sc)
            body[ign] = "-1"
            head = np.char.mod("%d", np.column_stack([np.full(len(c), s), c]))
            rows = np.column_stack([head, body])
            if len(rows):
                fh.write("\n".join(" ".join(r) for r in rows.tolist()))
                fh.write("\n")


def read_field(path, spec: GridSpec | None = None) -> AffinityField:
    """Parse an affinity file. The header, when present, defines the grid spec."""
    path = Path(path)
    lines = path.read_text().splitlines()
    rows, linenos = [], []
    for n, line in enumerate(lines, 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            m = _HEADER.match(s)
            if m and spec is None:
                try:
                    spec = GridSpec(float(m.group(1)), int(m.group(2)), int(m.group(3)))
                except ValidationError as exc:
                    raise FormatError(str(exc), path=path, line=n) from None
            continue
        rows.append(s)
        linenos.append(n)
    if spec is None:
        raise FormatError("missing '# voxel_size=... extent=... scales=...' header", path=path)
    try:
        flat = np.array(" ".join(rows).split(), dtype=np.float64)
        if flat.size != 10 * len(rows):
            raise ValueError
    except ValueError:
        for s, n in zip(rows, linenos):
            words = s.split()
            try:
                [float(w) for w in words]
            except ValueError:
                raise FormatError(f"non-numeric field in {s!r}", path=path, line=n) from None
            if len(words) != 10:
                raise FormatError(f"expected 10 fields, got {len(words)}", path=path, line=n) from None
        raise
    table = flat.reshape(-1, 10)
    head = table[:, :4]
    if np.any(head != np.floor(head)):
        bad = int(np.flatnonzero(np.any(head != np.floor(head), axis=1))[0])
        raise FormatError("scale and coordinates must be integers", path=path, line=linenos[bad])
    head = head.astype(np.int64)
    sc = table[:, 4:]
    bad_rows = np.flatnonzero(np.any(~((sc == IGNORE) | ((sc >= 0) & (sc <= 1))), axis=1))
    if len(bad_rows):
        r = int(bad_rows[0])
        raise ValidationError(f"{path}: line {linenos[r]}: score outside [0, 1] and not -1")
    bad_scale = (head[:, 0] < 0) | (head[:, 0] >= spec.num_scales)
    if np.any(bad_scale):
        raise FormatError("scale index out of range", path=path, line=linenos[int(np.flatnonzero(bad_scale)[0])])
    keys, scores = [], []
    for s in range(spec.num_scales):
        sel = head[:, 0] == s
        c = head[sel, 1:]
        ext = spec.scale_extent(s)
        if np.any((c < 0) | (c >= ext)):
            r = int(np.flatnonzero(sel)[np.flatnonzero(np.any((c < 0) | (c >= ext), axis=1))[0]])
            raise FormatError("voxel coordinate outside the grid extent", path=path, line=linenos[r])
        k = pack(c)
        order = np.argsort(k, kind="stable")
        k = k[order]
        if len(k) > 1 and np.any(np.diff(k) == 0):
            raise FormatError(f"duplicate voxel at scale {s}", path=path)
        keys.append(k)
        scores.append(sc[sel][order])
    return AffinityField(spec, keys, scores)
