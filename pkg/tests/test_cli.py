from __future__ import annotations

import numpy as np
import pytest

from affseg import __version__
from affseg.cli import run
from affseg.mesh_io import load_instances, load_mesh, save_labels, save_mesh
from affseg.synthetic import make_scene


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    s = make_scene(3, 6, 2500)
    mesh = s.mesh
    save_mesh(d / "m.ply", type(mesh).from_arrays(mesh.positions, mesh.triangles))
    save_labels(d / "l.txt", s.labels)
    return d


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_version(capsys):
    code, out, _ = call(capsys, "--version")
    assert code == 0
    assert __version__ in out and "affinity format 1" in out


def test_no_command_is_usage_error(capsys):
    assert call(capsys)[0] == 1


def test_cluster_needs_affinity(capsys, files):
    code, _, err = call(capsys, "cluster", "--mesh", files / "m.ply", "--out", files / "x.txt")
    assert code == 1
    assert "--affinity" in err


def test_missing_file_is_data_error(capsys, files):
    assert call(capsys, "voxelize", "--mesh", files / "nope.ply", "--out", files / "v.txt")[0] == 2


def test_bad_affinity_is_data_error(capsys, files, tmp_path):
    (tmp_path / "a.txt").write_text("# voxel_size=0.02 extent=4096 scales=2\n0 1 1 1 2.0 1 1 1 1 1\n")
    code, _, err = call(
        capsys, "cluster", "--mesh", files / "m.ply", "--affinity", tmp_path / "a.txt",
        "--clusters-out", tmp_path / "c.txt",
    )
    assert code == 2
    assert "line 2" in err


def test_config_file(capsys, files, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"mesh = {files / 'm.ply'}\nout = {tmp_path / 'v.txt'}\nscales = 3  # coarser\n")
    assert call(capsys, "voxelize", "--config", cfg)[0] == 0
    scales = {int(line.split()[0]) for line in (tmp_path / "v.txt").read_text().splitlines()}
    assert scales == {0, 1, 2}
    # flags override the file
    assert call(capsys, "voxelize", "--config", cfg, "--scales", "1")[0] == 0
    assert {line.split()[0] for line in (tmp_path / "v.txt").read_text().splitlines()} == {"0"}


def test_config_rejects_unknown_key(capsys, files, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("voxel_sise = 0.05\n")
    code, _, err = call(capsys, "voxelize", "--config", cfg, "--mesh", files / "m.ply", "--out", tmp_path / "v")
    assert code == 1
    assert "voxel_sise" in err


def test_threads_must_be_positive(capsys, files, tmp_path):
    assert call(capsys, "voxelize", "--mesh", files / "m.ply", "--out", tmp_path / "v", "--threads", "0")[0] == 1


def test_pipeline_is_deterministic(capsys, files):
    argv = ["pipeline", "--mesh", files / "m.ply", "--labels", files / "l.txt", "--seed", "7", "--flip", "0.05"]
    first = call(capsys, *argv)
    second = call(capsys, *argv)
    assert first[0] == 0
    assert first[1] == second[1]
    assert "mean AP" in first[1]
    assert "iteration=1 " in first[2]


def test_pipeline_equals_composed_subcommands(capsys, files, tmp_path):
    common = ["--seed", "7"]
    code, piped, _ = call(
        capsys, "pipeline", "--mesh", files / "m.ply", "--labels", files / "l.txt", *common,
        "--flip", "0.1", "--jitter", "0.2", "--work-dir", tmp_path / "work",
    )
    assert code == 0
    steps = [
        ["densify", "--mesh", files / "m.ply", "--labels", files / "l.txt", "--out", tmp_path / "d.ply", *common],
        ["oracle-affinity", "--mesh", tmp_path / "d.ply", "--out", tmp_path / "a.txt", "--flip", "0.1",
         "--jitter", "0.2", *common],
        ["cluster", "--mesh", tmp_path / "d.ply", "--affinity", tmp_path / "a.txt", "--semantics",
         files / "l.txt", "--out", tmp_path / "i.txt", "--clusters-out", tmp_path / "c.txt"],
        ["assemble", "--mesh", tmp_path / "d.ply", "--clusters", tmp_path / "c.txt", "--affinity",
         tmp_path / "a.txt", "--semantics", files / "l.txt", "--out", tmp_path / "i2.txt"],
    ]
    for argv in steps:
        assert call(capsys, *argv)[0] == 0
    code, composed, _ = call(capsys, "evaluate", "--pred", tmp_path / "i.txt", "--labels", files / "l.txt")
    assert code == 0
    assert composed == piped
    for name in ("i.txt", "i2.txt"):
        assert (tmp_path / name).read_text() == (tmp_path / "work" / "instances.txt").read_text()
    assert (tmp_path / "a.txt").read_text() == (tmp_path / "work" / "affinity.txt").read_text()


def test_cluster_writes_instances(capsys, files, tmp_path):
    assert call(capsys, "gen-affinity", "--mesh", files / "m.ply", "--labels", files / "l.txt",
                "--out", tmp_path / "a.txt")[0] == 0
    code = call(capsys, "cluster", "--mesh", files / "m.ply", "--affinity", tmp_path / "a.txt",
                "--semantics", files / "l.txt", "--out", tmp_path / "inst.txt")[0]
    assert code == 0
    seg = load_instances(tmp_path / "inst.txt", load_mesh(files / "m.ply").num_vertices)
    assert len(seg.instances) >= 1
    code, out, _ = call(capsys, "evaluate", "--pred", tmp_path / "inst.txt", "--labels", files / "l.txt",
                        "--dump", tmp_path / "ap.txt")
    assert out.splitlines()[-1].split()[-1] == "1.000"
    assert all(line.split()[1] in ("1.0", "nan") for line in (tmp_path / "ap.txt").read_text().splitlines())


def test_threads_and_backends_bit_identical(capsys, files, tmp_path):
    assert call(capsys, "oracle-affinity", "--mesh", files / "m.ply", "--labels", files / "l.txt",
                "--out", tmp_path / "a.txt", "--flip", "0.2", "--seed", "3")[0] == 0
    outs = set()
    for backend in ("python", "cython"):
        for t in (1, 4, 8):
            p = tmp_path / f"c{backend}{t}.txt"
            assert call(capsys, "cluster", "--mesh", files / "m.ply", "--affinity", tmp_path / "a.txt",
                        "--clusters-out", p, "--threads", t, "--backend", backend)[0] == 0
            outs.add(p.read_bytes())
    assert len(outs) == 1


def test_densify_records_config(capsys, files, tmp_path):
    assert call(capsys, "densify", "--mesh", files / "m.ply", "--out", tmp_path / "d.ply", "--seed", "42")[0] == 0
    d = load_mesh(tmp_path / "d.ply")
    assert any("seed=42" in c for c in d.comments)
    assert d.num_vertices > load_mesh(files / "m.ply").num_vertices
    assert np.all(d.sampled[load_mesh(files / "m.ply").num_vertices:])
