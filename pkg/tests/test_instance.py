from __future__ import annotations

import numpy as np
import pytest

from affseg.affinity import IGNORE, AffinityField
from affseg.classes import ClassInfo, ClassTable
from affseg.cluster import ClusterGraph
from affseg.errors import ConfigError, FormatError
from affseg.instance import InstanceConfig, add_planar_components, assemble
from affseg.mesh_io import Mesh
from affseg.segmentation import Instance, InstanceSegmentation
from affseg.voxel_grid import unpack

from conftest import point_cloud

CHAIR, TABLE, WALL, PICTURE, CURTAIN = 5, 7, 1, 11, 16


def line(n, num_scales=1):
    return point_cloud([[i, 0, 0] for i in range(n)], num_scales=num_scales, edges=[[i, i + 1] for i in range(n - 1)])


def field(grid, fn=lambda s, p, d: 1.0):
    scores = []
    for s in range(grid.num_scales):
        coords = unpack(grid.keys[s]).tolist()
        scores.append(np.array([[fn(s, tuple(c), d) for d in range(6)] for c in coords], dtype=float))
    return AffinityField(grid.spec, list(grid.keys), scores)


def one_cluster(n):
    mesh, g = line(n)
    return mesh, g, ClusterGraph.from_labels(g, np.zeros(n, dtype=int), mesh.edges)


def test_majority_vote():
    _, g, gr = one_cluster(10)
    seg = assemble(gr, [CHAIR] * 7 + [TABLE] * 3, field(g))
    assert [(i.id, i.class_id) for i in seg.instances] == [(1, CHAIR)]
    assert seg.point_instance.tolist() == [1] * 10


def test_vote_tie_goes_to_smaller_id():
    _, g, gr = one_cluster(10)
    seg = assemble(gr, [TABLE] * 5 + [CHAIR] * 5, field(g))
    assert seg.instances[0].class_id == CHAIR


def test_full_agreement_confidence():
    _, g, gr = one_cluster(10)
    assert assemble(gr, [CHAIR] * 10, field(g)).instances[0].confidence == 1.0


def test_partial_agreement_confidence():
    _, g, gr = one_cluster(10)

    def fn(s, p, d):
        # pair (2,3) disagrees in both directions; pair (6,7) only in one
        if (p[0], d) in {(2, 1), (3, 0)}:
            return 0.1
        if (p[0], d) == (6, 1):
            return 0.2
        return 1.0

    # 9 internal pairs; (2,3) fuses to 0.1 and (6,7) to 0.6
    assert assemble(gr, [CHAIR] * 10, field(g, fn)).instances[0].confidence == pytest.approx(8 / 9)


def test_no_internal_pairs_confidence_one():
    mesh, g = point_cloud([[2 * i, 0, 0] for i in range(12)], num_scales=1)
    gr = ClusterGraph.from_labels(g, np.zeros(12, dtype=int), np.zeros((0, 2), dtype=int))
    assert assemble(gr, [CHAIR] * 12, field(g, lambda s, p, d: IGNORE)).instances[0].confidence == 1.0


def test_small_and_non_instance_clusters_dropped():
    mesh, g = line(30)
    labels = np.r_[np.zeros(9), np.ones(11), np.full(10, 2)].astype(int)
    gr = ClusterGraph.from_labels(g, labels, mesh.edges)
    seg = assemble(gr, [CHAIR] * 9 + [TABLE] * 11 + [WALL] * 10, field(g))
    assert [(i.id, i.class_id, len(i)) for i in seg.instances] == [(1, TABLE, 11)]
    assert seg.point_instance.tolist() == [0] * 9 + [1] * 11 + [0] * 10
    seg = assemble(gr, [CHAIR] * 9 + [TABLE] * 11 + [WALL] * 10, field(g), cfg=InstanceConfig(min_instance_points=5))
    assert [i.class_id for i in seg.instances] == [CHAIR, TABLE]


def test_sampled_points_excluded():
    # 12 points in one cluster; the last two stand in for densified samples
    _, g, gr = one_cluster(12)
    seg = assemble(gr, [CHAIR] * 10, field(g))
    assert seg.num_points == 10
    assert seg.instances[0].members.tolist() == list(range(10))


def patch_mesh(sizes_and_classes):
    """Separate square-ish grid patches; returns mesh and per-vertex classes."""
    positions, tris, sem = [], [], []
    offset = 0
    for k, (side, cls) in enumerate(sizes_and_classes):
        ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        positions.append(np.stack([ii.ravel() + 100 * k, jj.ravel(), np.zeros(side * side)], 1))
        idx = np.arange(side * side).reshape(side, side) + offset
        a, b, c, d = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
        tris.append(np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)]))
        sem.append(np.full(side * side, cls))
        offset += side * side
    return Mesh.from_arrays(np.concatenate(positions), np.concatenate(tris)), np.concatenate(sem)


def test_two_picture_patches():
    mesh, sem = patch_mesh([(13, PICTURE), (13, PICTURE)])  # 169 vertices each
    base = InstanceSegmentation.empty(len(sem))
    out = add_planar_components(base, sem, mesh)
    assert [(i.id, i.class_id, len(i), i.confidence) for i in out.instances] == [
        (1, PICTURE, 169, 0.5), (2, PICTURE, 169, 0.5)
    ]


def test_small_planar_component_ignored():
    mesh, sem = patch_mesh([(7, CURTAIN)])  # 49 vertices
    base = InstanceSegmentation.empty(len(sem))
    assert add_planar_components(base, sem, mesh, cfg=InstanceConfig(min_planar_points=100)) == base


def test_no_planar_classes_is_identity():
    mesh, sem = patch_mesh([(12, CHAIR)])
    base = InstanceSegmentation(np.ones(len(sem), dtype=int), [Instance(1, CHAIR, 0.9, np.arange(len(sem)))])
    assert add_planar_components(base, sem, mesh) == base


def test_planar_overlap_last_writer():
    mesh, sem = patch_mesh([(11, PICTURE)])
    n = len(sem)
    base = InstanceSegmentation(np.ones(n, dtype=int), [Instance(1, CHAIR, 0.9, np.arange(n))])
    out = add_planar_components(base, sem, mesh)
    assert out.instance(1).members.tolist() == list(range(n))
    assert out.instance(2).class_id == PICTURE
    assert np.all(out.point_instance == 2)


def test_missing_planar_class_is_config_error():
    table = ClassTable([ClassInfo(5, "chair", True, False), ClassInfo(11, "picture", True, True)])
    mesh, sem = patch_mesh([(3, CHAIR)])
    with pytest.raises(ConfigError):
        add_planar_components(InstanceSegmentation.empty(len(sem)), sem, mesh, table)


def test_default_class_table():
    t = ClassTable.default()
    assert len(t) == 20
    assert not t.is_instance(1) and not t.is_instance(2)
    assert sorted(t.planar_ids()) == [11, 16, 28, 34, 36]
    assert t.name(5) == "chair"


def test_class_table_parse_error(tmp_path):
    (tmp_path / "c.txt").write_text("1 wall 0 0\n2 floor yes 0\n")
    with pytest.raises(FormatError) as exc:
        ClassTable.load(tmp_path / "c.txt")
    assert exc.value.line == 2
