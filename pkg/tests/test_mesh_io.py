from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affseg.errors import AlignmentError, FormatError, UnsupportedFaceError
from affseg.mesh_io import (
    LabelSet,
    Mesh,
    Origin,
    load_instances,
    load_labels,
    load_mesh,
    save_instances,
    save_labels,
    save_mesh,
    vertex_normals,
)
from affseg.segmentation import Instance, InstanceSegmentation


def write_ascii(path, vertices, faces, extra_vertex_props=()):
    props = ["x", "y", "z", *extra_vertex_props]
    lines = ["ply", "format ascii 1.0", f"element vertex {len(vertices)}"]
    lines += [f"property float {p}" for p in props]
    lines += [f"element face {len(faces)}", "property list uchar int vertex_indices", "end_header"]
    lines += [" ".join(map(str, v)) for v in vertices]
    lines += [" ".join(map(str, [len(f), *f])) for f in faces]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_single_triangle_has_three_edges(tmp_path):
    m = load_mesh(write_ascii(tmp_path / "t.ply", [(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)]))
    assert m.num_vertices == 3
    assert sorted(map(tuple, m.edges.tolist())) == [(0, 1), (0, 2), (1, 2)]


def test_shared_side_is_deduplicated(tmp_path):
    verts = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)]
    m = load_mesh(write_ascii(tmp_path / "t.ply", verts, [(0, 1, 2), (1, 3, 2)]))
    assert len(m.edges) == 5


def test_quad_face_rejected(tmp_path):
    verts = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)]
    with pytest.raises(UnsupportedFaceError):
        load_mesh(write_ascii(tmp_path / "q.ply", verts, [(0, 1, 2, 3)]))


def test_parse_error_reports_line(tmp_path):
    p = write_ascii(tmp_path / "bad.ply", [(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
    text = p.read_text().replace("1 0 0", "1 zero 0")
    p.write_text(text)
    with pytest.raises(FormatError) as exc:
        load_mesh(p)
    assert exc.value.line == text.splitlines().index("1 zero 0") + 1


def test_truncated_binary_reports_offset(tmp_path):
    m = Mesh.from_arrays(np.eye(3), [[0, 1, 2]])
    p = tmp_path / "m.ply"
    save_mesh(p, m)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError) as exc:
        load_mesh(p)
    assert exc.value.offset is not None


def test_missing_normals_are_area_weighted():
    # a big triangle in z=0 and a tiny one tilted, sharing vertex 0
    pos = np.array([[0, 0, 0], [4, 0, 0], [0, 4, 0], [0, 0, 0.1], [0.1, 0, 0]], dtype=float)
    tris = np.array([[0, 1, 2], [0, 3, 4]])
    n = vertex_normals(pos, tris)
    big = np.array([0, 0, 1.0]) * 8.0
    small = np.cross(pos[3] - pos[0], pos[4] - pos[0]) / 2
    want = (big + small) / np.linalg.norm(big + small)
    assert np.allclose(n[0], want)
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-4)


def test_degenerate_triangle_keeps_edges():
    pos = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], dtype=float)
    m = Mesh.from_arrays(pos, [[0, 1, 2]])
    assert len(m.edges) == 3
    assert np.allclose(np.linalg.norm(m.normals, axis=1), 1.0)


def test_default_colour_is_mid_grey():
    m = Mesh.from_arrays(np.eye(3), [[0, 1, 2]])
    assert np.all(m.colors == 0.5)
    assert m.vertex(1).origin_flag is Origin.ORIGINAL


@pytest.mark.parametrize("ascii", [True, False])
def test_mesh_round_trip(tmp_path, ascii, rng):
    pos = rng.uniform(-3, 3, size=(40, 3))
    tris = rng.integers(0, 40, size=(30, 3))
    tris = tris[(tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])]
    m = Mesh.from_arrays(
        pos, tris, colors=rng.integers(0, 256, size=(40, 3)) / 255.0,
        extra_edges=[[0, 39], [5, 7]], sampled=np.r_[np.zeros(35, bool), np.ones(5, bool)],
        semantic=rng.integers(1, 40, 40), instance=rng.integers(0, 5, 40),
    )
    p = tmp_path / "m.ply"
    save_mesh(p, m, ascii=ascii, comments=["seed=3"])
    back = load_mesh(p)
    assert np.abs(back.positions - m.positions).max() <= 1e-6
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.edges, m.edges)
    assert np.array_equal(back.sampled, m.sampled)
    assert np.array_equal(back.semantic, m.semantic)
    assert np.array_equal(back.instance, m.instance)
    assert np.allclose(back.colors, m.colors)
    assert np.allclose(back.normals, m.normals, atol=1e-6)
    assert "seed=3" in back.comments


def test_big_endian_binary(tmp_path):
    header = (
        "ply\nformat binary_big_endian 1.0\nelement vertex 3\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
    ).encode()
    body = np.array([0, 0, 0, 1, 0, 0, 0, 1, 0], dtype=">f4").tobytes()
    body += bytes([3]) + np.array([0, 1, 2], dtype=">i4").tobytes()
    (tmp_path / "be.ply").write_bytes(header + body)
    m = load_mesh(tmp_path / "be.ply")
    assert np.allclose(m.positions[1], [1, 0, 0])
    assert len(m.edges) == 3


def _mesh(n):
    return Mesh.from_arrays(np.zeros((n, 3)), np.zeros((0, 3)))


def test_labels_aligned(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text("".join(f"{i % 3} {i % 7}\n" for i in range(100)))
    labels = load_labels(p, _mesh(100))
    assert len(labels) == 100
    assert labels.num_instances == 6


def test_labels_length_mismatch(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text("".join("1 1\n" for _ in range(99)))
    with pytest.raises(AlignmentError):
        load_labels(p, _mesh(100))


def test_unannotated_labels(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text("".join("5 0\n" for _ in range(100)))
    assert load_labels(p, _mesh(100)).num_instances == 0


def test_labels_round_trip(tmp_path, rng):
    labels = LabelSet(rng.integers(0, 40, 50), rng.integers(0, 9, 50))
    save_labels(tmp_path / "l.txt", labels)
    assert load_labels(tmp_path / "l.txt") == labels


def test_instance_file_layout(tmp_path):
    pid = np.array([1, 1, 1, 0, 2, 2, 0, 0, 2, 1])
    seg = InstanceSegmentation(
        pid, [Instance(2, 5, 0.25, np.flatnonzero(pid == 2)), Instance(1, 3, 1.0, np.flatnonzero(pid == 1))]
    )
    p = tmp_path / "i.txt"
    save_instances(p, seg)
    lines = p.read_text().splitlines()
    assert lines[0] == "2"
    assert lines[1].split()[:2] == ["1", "3"] and lines[2].split()[:2] == ["2", "5"]
    assert lines[3:] == [str(v) for v in pid]
    assert load_instances(p, 10) == seg


def test_empty_instance_file(tmp_path):
    p = tmp_path / "i.txt"
    save_instances(p, InstanceSegmentation.empty(10))
    assert p.read_text().splitlines() == ["0"] + ["0"] * 10
    assert load_instances(p) == InstanceSegmentation.empty(10)


def test_overlapping_instances_round_trip(tmp_path):
    pid = np.array([1, 1, 2, 2, 2])
    seg = InstanceSegmentation(pid, [Instance(1, 3, 0.9, [0, 1, 2]), Instance(2, 11, 0.5, [2, 3, 4])])
    p = tmp_path / "i.txt"
    save_instances(p, seg)
    assert p.read_text().splitlines()[5] == "2 1"
    assert load_instances(p) == seg


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 40), st.floats(0, 1)), max_size=6), st.integers(1, 30), st.randoms())
def test_instance_round_trip_property(tmp_path_factory, table, n, rnd):
    pid = np.zeros(n, dtype=np.int64)
    instances = []
    for iid, (cls, conf) in enumerate(table, start=1):
        members = sorted(rnd.sample(range(n), rnd.randint(0, n)))
        pid[members] = iid
        instances.append(Instance(iid, cls, round(conf, 6), members))
    # keep member lists consistent with the last-writer column
    for inst in instances:
        inst.members = np.array(sorted(set(inst.members.tolist())), dtype=np.int64)
    seg = InstanceSegmentation(pid, instances)
    p = tmp_path_factory.mktemp("inst") / "i.txt"
    save_instances(p, seg)
    assert load_instances(p, n) == seg
