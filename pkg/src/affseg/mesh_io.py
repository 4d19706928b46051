"""Triangle meshes, per-vertex label files and instance files.

Meshes are stored as structure-of-arrays. Vertices that were added by
densification always follow the original vertices, so the first
``num_original`` rows are the input mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import AlignmentError, FormatError, UnsupportedFaceError
from .segmentation import Instance, InstanceSegmentation

DEFAULT_COLOR = (0.5, 0.5, 0.5)


class Origin(Enum):
    ORIGINAL = "original"
    SAMPLED = "sampled"


@dataclass(frozen=True)
class Vertex:
    position: tuple[float, float, float]
    color: tuple[float, float, float]
    normal: tuple[float, float, float]
    semantic_class: int | None = None
    instance_id: int | None = None
    origin_flag: Origin = Origin.ORIGINAL


def _pack_edges(a, b, n):
    lo = np.minimum(a, b).astype(np.int64)
    hi = np.maximum(a, b).astype(np.int64)
    keep = lo != hi
    return lo[keep] * np.int64(max(n, 1)) + hi[keep]


def canonical_edges(edges, num_vertices: int) -> np.ndarray:
    """Sorted, deduplicated ``(E, 2)`` array with ``i < j`` and no self-loops."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = np.int64(max(num_vertices, 1))
    keys = np.unique(_pack_edges(edges[:, 0], edges[:, 1], num_vertices))
    return np.stack([keys // n, keys % n], axis=1)


def triangle_edges(triangles, num_vertices: int) -> np.ndarray:
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    sides = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    return canonical_edges(sides, num_vertices)


def vertex_normals(positions, triangles) -> np.ndarray:
    """Area-weighted vertex normals; degenerate faces contribute nothing."""
    positions = np.asarray(positions, dtype=np.float64)
    normals = np.zeros_like(positions)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(t):
        p0, p1, p2 = positions[t[:, 0]], positions[t[:, 1]], positions[t[:, 2]]
        # |cross| is twice the face area, so summing raw crosses weights by area
        face = np.cross(p1 - p0, p2 - p0)
        for c in range(3):
            np.add.at(normals, t[:, c], face)
    return _unit(normals)


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v, axis=1)
    out = np.zeros_like(v)
    ok = norm > 0
    out[ok] = v[ok] / norm[ok, None]
    out[~ok] = (0.0, 0.0, 1.0)
    return out


@dataclass
class Mesh:
    positions: np.ndarray
    triangles: np.ndarray
    colors: np.ndarray
    normals: np.ndarray
    edges: np.ndarray
    sampled: np.ndarray
    semantic: np.ndarray | None = None
    instance: np.ndarray | None = None
    comments: list[str] = field(default_factory=list)

    @classmethod
    def from_arrays(
        cls,
        positions,
        triangles,
        *,
        colors=None,
        normals=None,
        extra_edges=None,
        sampled=None,
        semantic=None,
        instance=None,
        comments=None,
    ) -> "Mesh":
        positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) and (triangles.min() < 0 or triangles.max() >= n):
            raise FormatError("triangle index out of range")
        if colors is None:
            colors = np.tile(DEFAULT_COLOR, (n, 1))
        if normals is None:
            normals = vertex_normals(positions, triangles)
        else:
            normals = _unit(normals)
        edges = triangle_edges(triangles, n)
        if extra_edges is not None and len(extra_edges):
            edges = canonical_edges(np.concatenate([edges, np.asarray(extra_edges).reshape(-1, 2)]), n)
        sampled = np.zeros(n, dtype=bool) if sampled is None else np.asarray(sampled, dtype=bool)
        return cls(
            positions=positions,
            triangles=triangles,
            colors=np.asarray(colors, dtype=np.float64).reshape(-1, 3),
            normals=normals,
            edges=edges,
            sampled=sampled,
            semantic=None if semantic is None else np.asarray(semantic, dtype=np.int64),
            instance=None if instance is None else np.asarray(instance, dtype=np.int64),
            comments=list(comments or []),
        )

    @property
    def num_vertices(self) -> int:
        return len(self.positions)

    @property
    def num_original(self) -> int:
        return int(np.count_nonzero(~self.sampled))

    def vertex(self, i: int) -> Vertex:
        return Vertex(
            position=tuple(self.positions[i]),
            color=tuple(self.colors[i]),
            normal=tuple(self.normals[i]),
            semantic_class=None if self.semantic is None else int(self.semantic[i]),
            instance_id=None if self.instance is None else int(self.instance[i]),
            origin_flag=Origin.SAMPLED if self.sampled[i] else Origin.ORIGINAL,
        )

    def extra_edges(self) -> np.ndarray:
        """Edges that are not a side of any triangle."""
        n = self.num_vertices
        tri = _pack_edges(*triangle_edges(self.triangles, n).T, n)
        mine = _pack_edges(*self.edges.T, n)
        return self.edges[~np.isin(mine, tri)]

    def with_labels(self, labels: "LabelSet") -> "Mesh":
        if len(labels) != self.num_vertices:
            raise AlignmentError(f"{len(labels)} label records for {self.num_vertices} vertices")
        return replace(self, semantic=labels.semantic.copy(), instance=labels.instance.copy())

    def label_set(self) -> "LabelSet":
        if self.semantic is None or self.instance is None:
            raise AlignmentError("mesh carries no per-vertex labels")
        return LabelSet(self.semantic, self.instance)


@dataclass
class LabelSet:
    semantic: np.ndarray
    instance: np.ndarray
    class_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.semantic = np.asarray(self.semantic, dtype=np.int64)
        self.instance = np.asarray(self.instance, dtype=np.int64)
        if self.semantic.shape != self.instance.shape:
            raise AlignmentError("semantic and instance arrays differ in length")

    def __len__(self):
        return len(self.semantic)

    @property
    def num_instances(self) -> int:
        ids = np.unique(self.instance)
        return int(np.count_nonzero(ids))

    def __eq__(self, other):
        if not isinstance(other, LabelSet):
            return NotImplemented
        return np.array_equal(self.semantic, other.semantic) and np.array_equal(
            self.instance, other.instance
        )


# ---------------------------------------------------------------- PLY

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, dtype) or (name, count_dtype, item_dtype)

    @property
    def has_list(self):
        return any(len(p) == 3 for p in self.props)


def _parse_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise FormatError("missing 'ply' magic", path=path, line=1)
    fmt = None
    elements: list[_Element] = []
    comments = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise FormatError("unexpected end of header", path=path, line=lineno)
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise FormatError("non-ascii header", path=path, line=lineno) from None
        if not line:
            continue
        words = line.split()
        key = words[0]
        if key == "end_header":
            break
        if key == "format":
            if len(words) < 2 or words[1] not in ("ascii", "binary_little_endian", "binary_big_endian"):
                raise FormatError(f"unknown format {line!r}", path=path, line=lineno)
            fmt = words[1]
        elif key in ("comment", "obj_info"):
            comments.append(line[len(key):].strip())
        elif key == "element":
            if len(words) != 3:
                raise FormatError(f"bad element line {line!r}", path=path, line=lineno)
            try:
                elements.append(_Element(words[1], int(words[2])))
            except ValueError:
                raise FormatError(f"bad element count {words[2]!r}", path=path, line=lineno) from None
        elif key == "property":
            if not elements:
                raise FormatError("property before element", path=path, line=lineno)
            try:
                if words[1] == "list":
                    elements[-1].props.append((words[4], _PLY_TYPES[words[2]], _PLY_TYPES[words[3]]))
                else:
                    elements[-1].props.append((words[2], _PLY_TYPES[words[1]]))
            except (KeyError, IndexError):
                raise FormatError(f"bad property line {line!r}", path=path, line=lineno) from None
        else:
            raise FormatError(f"unknown header keyword {key!r}", path=path, line=lineno)
    if fmt is None:
        raise FormatError("missing format line", path=path)
    return fmt, elements, comments, lineno


def _ascii_element(lines, start, el: _Element, path, header_lines):
    """Parse ``el.count`` rows from ``lines[start:]``. Returns (columns, next)."""
    rows = lines[start:start + el.count]
    if len(rows) < el.count:
        raise FormatError(
            f"expected {el.count} {el.name} rows, found {len(rows)}",
            path=path, line=header_lines + start + len(rows) + 1,
        )
    if not el.has_list:
        ncol = len(el.props)
        try:
            flat = np.array(b" ".join(rows).split(), dtype=np.float64)
            if flat.size != ncol * el.count:
                raise ValueError
        except ValueError:
            for k, row in enumerate(rows):
                words = row.split()
                try:
                    [float(w) for w in words]
                    ok = len(words) == ncol
                except ValueError:
                    ok = False
                if not ok:
                    raise FormatError(
                        f"malformed {el.name} row {row.decode(errors='replace')!r}",
                        path=path, line=header_lines + start + k + 1,
                    ) from None
            raise
        table = flat.reshape(el.count, ncol)
        return {p[0]: table[:, i] for i, p in enumerate(el.props)}, start + el.count
    # list-bearing element: only the face layout (one list property) is needed
    if el.name == "face":
        if len(el.props) != 1:
            raise FormatError("face element must have exactly one list property", path=path)
        try:
            flat = np.array(b" ".join(rows).split(), dtype=np.int64)
            if flat.size == 4 * el.count and np.all(flat[::4] == 3):
                return {el.props[0][0]: flat.reshape(-1, 4)[:, 1:]}, start + el.count
        except ValueError:
            pass
        for k, row in enumerate(rows):
            words = row.split()
            line = header_lines + start + k + 1
            try:
                vals = [int(w) for w in words]
            except ValueError:
                raise FormatError(f"malformed face row {row.decode(errors='replace')!r}", path=path, line=line) from None
            if not vals or vals[0] != len(vals) - 1:
                raise FormatError("face vertex count does not match row length", path=path, line=line)
            if vals[0] != 3:
                raise UnsupportedFaceError(f"face with {vals[0]} vertices", path=path, line=line)
        raise AssertionError("unreachable")
    # unknown list element: skip rows
    return {}, start + el.count


def _binary_element(buf, pos, el: _Element, endian, path):
    if not el.has_list:
        dt = np.dtype([(p[0], endian + p[1]) for p in el.props])
        need = dt.itemsize * el.count
        if pos + need > len(buf):
            raise FormatError(f"truncated {el.name} data", path=path, offset=len(buf))
        arr = np.frombuffer(buf, dtype=dt, count=el.count, offset=pos)
        return {name: arr[name].astype(np.float64) for name in dt.names}, pos + need
    if el.name == "face" and len(el.props) == 1:
        _, cnt_t, item_t = el.props[0]
        dt = np.dtype([("n", endian + cnt_t), ("v", endian + item_t, (3,))])
        need = dt.itemsize * el.count
        if pos + need <= len(buf):
            arr = np.frombuffer(buf, dtype=dt, count=el.count, offset=pos)
            if np.all(arr["n"] == 3):
                return {el.props[0][0]: arr["v"].astype(np.int64)}, pos + need
    # general path: walk rows one at a time
    out: dict[str, list] = {p[0]: [] for p in el.props}
    for _ in range(el.count):
        for p in el.props:
            if len(p) == 2:
                dt = np.dtype(endian + p[1])
                if pos + dt.itemsize > len(buf):
                    raise FormatError(f"truncated {el.name} data", path=path, offset=pos)
                out[p[0]].append(np.frombuffer(buf, dt, 1, pos)[0])
                pos += dt.itemsize
            else:
                ct, it = np.dtype(endian + p[1]), np.dtype(endian + p[2])
                if pos + ct.itemsize > len(buf):
                    raise FormatError(f"truncated {el.name} data", path=path, offset=pos)
                n = int(np.frombuffer(buf, ct, 1, pos)[0])
                if el.name == "face" and n != 3:
                    raise UnsupportedFaceError(f"face with {n} vertices", path=path, offset=pos)
                pos += ct.itemsize
                if pos + n * it.itemsize > len(buf):
                    raise FormatError(f"truncated {el.name} data", path=path, offset=pos)
                out[p[0]].append(np.frombuffer(buf, it, n, pos).astype(np.int64))
                pos += n * it.itemsize
    return {k: np.array(v) for k, v in out.items()}, pos


def load_mesh(path) -> Mesh:
    """Read a triangle mesh from an ascii or binary PLY file."""
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements, comments, header_lines = _parse_header(fh, path)
        body = fh.read()
    data: dict[str, dict] = {}
    if fmt == "ascii":
        lines = [ln for ln in body.split(b"\n")]
        if lines and lines[-1].strip() == b"":
            lines = lines[:-1]
        pos = 0
        for el in elements:
            data[el.name], pos = _ascii_element(lines, pos, el, path, header_lines)
    else:
        endian = "<" if fmt == "binary_little_endian" else ">"
        pos = 0
        for el in elements:
            data[el.name], pos = _binary_element(body, pos, el, endian, path)

    v = data.get("vertex")
    if v is None or not all(k in v for k in "xyz"):
        raise FormatError("vertex element with x, y, z is required", path=path)
    positions = np.stack([v["x"], v["y"], v["z"]], axis=1)
    n = len(positions)
    normals = np.stack([v["nx"], v["ny"], v["nz"]], axis=1) if all(k in v for k in ("nx", "ny", "nz")) else None
    colors = None
    if all(k in v for k in ("red", "green", "blue")):
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1)
        rgb_type = dict((p[0], p[1]) for el in elements if el.name == "vertex" for p in el.props)["red"]
        if rgb_type.startswith("u") or rgb_type.startswith("i"):
            colors = colors / 255.0
    face = data.get("face", {})
    tris = next(iter(face.values()), np.zeros((0, 3), dtype=np.int64))
    tris = np.asarray(tris, dtype=np.int64).reshape(-1, 3) if len(tris) else np.zeros((0, 3), dtype=np.int64)
    if len(tris) and (tris.min() < 0 or tris.max() >= n):
        raise FormatError("face references a vertex index out of range", path=path)
    extra = None
    if "edge" in data and "vertex1" in data["edge"]:
        extra = np.stack([data["edge"]["vertex1"], data["edge"]["vertex2"]], axis=1).astype(np.int64)
        if len(extra) and (extra.min() < 0 or extra.max() >= n):
            raise FormatError("edge references a vertex index out of range", path=path)
    sampled = v["sampled"].astype(bool) if "sampled" in v else None
    semantic = v["semantic"].astype(np.int64) if "semantic" in v else None
    instance = v["instance"].astype(np.int64) if "instance" in v else None
    if sampled is not None and np.any(np.diff(sampled.astype(np.int8)) < 0):
        raise FormatError("sampled vertices must follow all original vertices", path=path)
    return Mesh.from_arrays(
        positions, tris, colors=colors, normals=normals, extra_edges=extra,
        sampled=sampled, semantic=semantic, instance=instance, comments=comments,
    )


def save_mesh(path, mesh: Mesh, *, ascii: bool = False, comments=None) -> None:
    """Write ``mesh`` as PLY.

    Positions are written as doubles. Edges that are not triangle sides go to
    an ``edge`` element, and the sampled flag and any labels become extra
    vertex properties, so loading the file reproduces the graph.
    """
    n = mesh.num_vertices
    props = [("x", "f8"), ("y", "f8"), ("z", "f8"), ("nx", "f4"), ("ny", "f4"), ("nz", "f4"),
             ("red", "u1"), ("green", "u1"), ("blue", "u1"), ("sampled", "u1")]
    cols = [mesh.positions[:, 0], mesh.positions[:, 1], mesh.positions[:, 2],
            mesh.normals[:, 0], mesh.normals[:, 1], mesh.normals[:, 2],
            *np.clip(np.rint(mesh.colors * 255), 0, 255).T, mesh.sampled]
    if mesh.semantic is not None and mesh.instance is not None:
        props += [("semantic", "i4"), ("instance", "i4")]
        cols += [mesh.semantic, mesh.instance]
    extra = mesh.extra_edges()
    names = {"f8": "double", "f4": "float", "u1": "uchar", "i4": "int"}
    header = ["ply", f"format {'ascii' if ascii else 'binary_little_endian'} 1.0"]
    header += [f"comment {c}" for c in list(mesh.comments) + list(comments or [])]
    header.append(f"element vertex {n}")
    header += [f"property {names[t]} {name}" for name, t in props]
    header += [f"element face {len(mesh.triangles)}", "property list uchar int vertex_indices"]
    if len(extra):
        header += [f"element edge {len(extra)}", "property int vertex1", "property int vertex2"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if ascii:
            fmts = {"f8": "%.17g", "f4": "%.9g", "u1": "%d", "i4": "%d"}
            vt = np.column_stack([np.asarray(c, dtype=np.float64) for c in cols])
            np.savetxt(fh, vt, fmt=" ".join(fmts[t] for _, t in props))
            if len(mesh.triangles):
                np.savetxt(fh, np.column_stack([np.full(len(mesh.triangles), 3), mesh.triangles]), fmt="%d")
            if len(extra):
                np.savetxt(fh, extra, fmt="%d")
        else:
            dt = np.dtype([(name, "<" + t) for name, t in props])
            rec = np.empty(n, dtype=dt)
            for (name, _), c in zip(props, cols):
                rec[name] = c
            fh.write(rec.tobytes())
            ft = np.empty(len(mesh.triangles), dtype=[("n", "u1"), ("v", "<i4", (3,))])
            ft["n"] = 3
            ft["v"] = mesh.triangles
            fh.write(ft.tobytes())
            if len(extra):
                fh.write(np.ascontiguousarray(extra, dtype="<i4").tobytes())


# ---------------------------------------------------------------- text records

def _read_int_table(path, ncols_min, ncols_max):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            words = s.split()
            if not ncols_min <= len(words) <= ncols_max:
                raise FormatError(f"expected {ncols_min} to {ncols_max} fields, got {len(words)}", path=path, line=lineno)
            try:
                rows.append([int(w) for w in words])
            except ValueError:
                raise FormatError(f"non-integer field in {s!r}", path=path, line=lineno) from None
    return rows


def load_labels(path, mesh: Mesh | None = None, class_names=None) -> LabelSet:
    """Read ``<semantic_class_id> <instance_id>`` records, one per original vertex."""
    rows = _read_int_table(path, 2, 2)
    arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
    if mesh is not None and len(arr) != mesh.num_original:
        raise AlignmentError(f"{path}: {len(arr)} label records for {mesh.num_original} vertices")
    return LabelSet(arr[:, 0], arr[:, 1], dict(class_names or {}))


def save_labels(path, labels: LabelSet) -> None:
    with open(path, "w") as fh:
        for s, i in zip(labels.semantic.tolist(), labels.instance.tolist()):
            fh.write(f"{s} {i}\n")


def load_semantics(path, num_points: int | None = None) -> np.ndarray:
    """Per-vertex class ids; extra columns (e.g. a labels file) are ignored."""
    rows = _read_int_table(path, 1, 2)
    sem = np.array([r[0] for r in rows], dtype=np.int64)
    if num_points is not None and len(sem) != num_points:
        raise AlignmentError(f"{path}: {len(sem)} semantic records for {num_points} vertices")
    return sem


def save_instances(path, seg: InstanceSegmentation) -> None:
    """Write the instance file.

    Line 1 is the instance count, then ``<id> <class> <confidence>`` per
    instance sorted by id, then one line per original vertex. A vertex line
    holds the last-writer id first; vertices belonging to several instances
    list the remaining ids after it.
    """
    insts = sorted(seg.instances, key=lambda i: i.id)
    n = seg.num_points
    extra: dict[int, list[int]] = {}
    for inst in insts:
        if len(inst.members) and inst.members.max() >= n:
            raise AlignmentError(f"instance {inst.id} references vertex beyond {n}")
        for v in inst.members[seg.point_instance[inst.members] != inst.id].tolist():
            extra.setdefault(v, []).append(inst.id)
    out = [f"{len(insts)}\n"]
    out += [f"{i.id} {i.class_id} {i.confidence:.6f}\n" for i in insts]
    pid = seg.point_instance.tolist()
    for v in range(n):
        if v in extra:
            out.append(" ".join(map(str, [pid[v]] + extra[v])) + "\n")
        else:
            out.append(f"{pid[v]}\n")
    Path(path).write_text("".join(out))


def load_instances(path, num_points: int | None = None) -> InstanceSegmentation:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError("empty instance file", path=path, line=1)
    try:
        k = int(lines[0])
    except ValueError:
        raise FormatError("first line must be the instance count", path=path, line=1) from None
    table = []
    for j in range(1, k + 1):
        if j >= len(lines):
            raise FormatError("truncated instance table", path=path, line=j + 1)
        words = lines[j].split()
        try:
            iid, cls, conf = int(words[0]), int(words[1]), float(words[2])
            if len(words) != 3:
                raise ValueError
        except (ValueError, IndexError):
            raise FormatError(f"bad instance row {lines[j]!r}", path=path, line=j + 1) from None
        if not 0.0 <= conf <= 1.0:
            raise FormatError(f"confidence {conf} outside [0, 1]", path=path, line=j + 1)
        table.append((iid, cls, conf))
    known = {t[0] for t in table}
    body = lines[k + 1:]
    if num_points is not None and len(body) != num_points:
        raise AlignmentError(f"{path}: {len(body)} vertex rows for {num_points} vertices")
    pid = np.zeros(len(body), dtype=np.int64)
    members: dict[int, list[int]] = {t[0]: [] for t in table}
    for v, line in enumerate(body):
        try:
            ids = [int(w) for w in line.split()]
            if not ids:
                raise ValueError
        except ValueError:
            raise FormatError(f"bad vertex row {line!r}", path=path, line=k + 2 + v) from None
        pid[v] = ids[0]
        for iid in ids:
            if iid == 0:
                continue
            if iid not in known:
                raise FormatError(f"unknown instance id {iid}", path=path, line=k + 2 + v)
            members[iid].append(v)
    return InstanceSegmentation(pid, [Instance(i, c, conf, members[i]) for i, c, conf in table])


__all__ = [
    "Mesh", "Vertex", "Origin", "LabelSet", "load_mesh", "save_mesh", "load_labels",
    "save_labels", "load_semantics", "save_instances", "load_instances",
    "triangle_edges", "canonical_edges", "vertex_normals",
]
