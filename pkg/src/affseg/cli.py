"""Command-line entry point: ``affseg <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .affinity import FORMAT_VERSION, OracleConfig, generate_oracle, generate_supervision, read_field, write_field
from .classes import ClassTable
from .cluster import ClusterGraph, cluster
from .densifier import DensifyConfig, densify
from .errors import AffsegError, ConfigError
from .evaluator import evaluate
from .instance import InstanceConfig, add_planar_components, assemble
from .mesh_io import (
    Mesh,
    load_instances,
    load_labels,
    load_mesh,
    load_semantics,
    save_instances,
    save_mesh,
)
from .segmentation import Instance, InstanceSegmentation
from .voxel_grid import GridSpec, voxelize

INSTANCE_FORMAT_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------- argument groups

def _grid_args(p):
    p.add_argument("--voxel-size", type=float, default=0.02)
    p.add_argument("--extent", type=int, default=4096)
    p.add_argument("--scales", type=int, default=2)


def _densify_args(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=5, help="points sampled per qualifying triangle")
    p.add_argument("--min-span", type=int, default=2, help="voxel span that qualifies a triangle")


def _oracle_args(p):
    p.add_argument("--flip", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--oracle-seed", type=int, default=None, help="defaults to --seed")


def _instance_args(p):
    p.add_argument("--classes", type=Path, default=None, help="class table (default: ScanNet)")
    p.add_argument("--min-instance-points", type=int, default=10)
    p.add_argument("--min-planar-points", type=int, default=100)
    p.add_argument("--planar-confidence", type=float, default=0.5)
    p.add_argument("--no-planar", action="store_true", help="skip planar-class components")


def _common(p):
    p.add_argument("--config", type=Path, default=None, help="key=value file; flags override it")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--backend", choices=sorted(kernels.BACKENDS), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="affseg", description=__doc__.splitlines()[0])
    parser.add_argument(
        "--version", action="version",
        version=f"affseg {__version__} (affinity format {FORMAT_VERSION}, instance format {INSTANCE_FORMAT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("densify", help="sample extra points inside large triangles")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--labels", type=Path, help="labels to embed; sampled points inherit them")
    p.add_argument("--out", type=Path, required=True)
    _grid_args(p), _densify_args(p), _common(p)

    p = sub.add_parser("voxelize", help="write the sparse voxel occupancy dump")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _grid_args(p), _common(p)

    p = sub.add_parser("gen-affinity", help="ground-truth affinity from instance labels")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--labels", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _grid_args(p), _common(p)

    p = sub.add_parser("oracle-affinity", help="noisy affinity derived from instance labels")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--labels", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    _grid_args(p), _oracle_args(p), _common(p)

    p = sub.add_parser("cluster", help="contract the mesh graph; optionally assemble instances")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--affinity", type=Path, required=True)
    p.add_argument("--semantics", type=Path, help="per-vertex class ids (needed for --out)")
    p.add_argument("--out", type=Path, help="instance file")
    p.add_argument("--clusters-out", type=Path, help="per-vertex cluster id file")
    _instance_args(p), _common(p)

    p = sub.add_parser("assemble", help="instances from a cluster id file")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--clusters", type=Path, required=True)
    p.add_argument("--affinity", type=Path, required=True)
    p.add_argument("--semantics", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _instance_args(p), _common(p)

    p = sub.add_parser("evaluate", help="AP@0.5 of an instance file against labels")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--classes", type=Path, default=None)
    p.add_argument("--dump", type=Path, help="also write '<class_id> <AP>' lines here")
    _common(p)

    p = sub.add_parser("pipeline", help="densify, voxelize, affinity, cluster, assemble, evaluate")
    p.add_argument("--mesh", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--affinity", type=Path, help="use this field instead of the oracle")
    p.add_argument("--no-densify", action="store_true")
    p.add_argument("--work-dir", type=Path, help="write intermediate files here")
    p.add_argument("--dump", type=Path)
    _grid_args(p), _densify_args(p), _oracle_args(p), _instance_args(p), _common(p)
    return parser


# ---------------------------------------------------------------- helpers

def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a path")
            return Path(argv[i + 1])
        if tok.startswith("--config="):
            return Path(tok.split("=", 1)[1])
    return None


def parse_args(parser, argv):
    """Parse ``argv``, taking defaults from a ``--config`` key=value file.

    Config keys are flag names without the leading dashes; keys the
    subcommand does not know are rejected.
    """
    config = _config_path(argv)
    command = next((t for t in argv if t in COMMANDS), None)
    if config is not None and command is not None:
        subparser = parser._subparsers._group_actions[0].choices[command]  # noqa: SLF001
        actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}  # noqa: SLF001
        values = {}
        for n, line in enumerate(config.read_text().splitlines(), 1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise UsageError(f"{config}:{n}: expected key=value")
            key, val = (t.strip() for t in s.split("=", 1))
            action = actions.get(key.replace("-", "_"))
            if action is None:
                raise UsageError(f"{config}:{n}: unknown key {key!r} for '{command}'")
            if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
                values[action.dest] = val.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    values[action.dest] = (action.type or str)(val)
                except (TypeError, ValueError):
                    raise UsageError(f"{config}:{n}: bad value {val!r} for {key!r}") from None
                if action.choices is not None and values[action.dest] not in action.choices:
                    raise UsageError(f"{config}:{n}: {key} must be one of {sorted(action.choices)}")
            action.required = False
        subparser.set_defaults(**values)
    return parser.parse_args(argv)


def _spec(args) -> GridSpec:
    return GridSpec(args.voxel_size, args.extent, args.scales)


def _classes(args) -> ClassTable:
    return ClassTable.load(args.classes) if args.classes else ClassTable.default()


def _instance_cfg(args) -> InstanceConfig:
    return InstanceConfig(args.min_instance_points, args.min_planar_points, args.planar_confidence)


def _labelled_mesh(args) -> Mesh:
    mesh = load_mesh(args.mesh)
    if args.labels is not None:
        labels = load_labels(args.labels, mesh)
        if mesh.num_original != mesh.num_vertices:
            raise ConfigError("labels file given for a densified mesh; densify with --labels instead")
        mesh = mesh.with_labels(labels)
    elif mesh.instance is None:
        raise ConfigError(f"{args.mesh} carries no labels; pass --labels")
    return mesh


def _stats_printer(t0):
    def show(stats, _graph):
        _log(
            f"iteration={stats.iteration} nodes={stats.nodes} edges={stats.edges} "
            f"merges={stats.merges} elapsed={time.perf_counter() - t0:.3f}s"
        )
    return show


def _run_cluster(mesh, field, args):
    spec = replace(field.spec, origin=None)
    grid = voxelize(mesh, spec)
    t0 = time.perf_counter()
    graph = cluster(mesh, grid, field, threads=args.threads, backend=args.backend, on_iteration=_stats_printer(t0))
    _log(f"clustering done: {graph.num_nodes} clusters in {time.perf_counter() - t0:.3f}s")
    return graph


def _instances(graph, semantics, field, mesh, args):
    classes = _classes(args)
    cfg = _instance_cfg(args)
    seg = assemble(graph, semantics, field, classes, cfg)
    if not args.no_planar:
        seg = add_planar_components(seg, semantics, mesh, classes, cfg, backend=args.backend)
    # the instance file stores 6 decimals; keep in-memory results identical
    return InstanceSegmentation(
        seg.point_instance,
        [Instance(i.id, i.class_id, round(i.confidence, 6), i.members) for i in seg.instances],
    )


def _report(report, args):
    print(report.format_table())
    if getattr(args, "dump", None):
        Path(args.dump).write_text(report.dump() + "\n")


# ---------------------------------------------------------------- subcommands

def cmd_densify(args):
    mesh = load_mesh(args.mesh)
    if args.labels is not None:
        mesh = mesh.with_labels(load_labels(args.labels, mesh))
    cfg = DensifyConfig(args.samples, args.min_span, args.seed)
    out = densify(mesh, _spec(args), cfg, threads=args.threads)
    if out is mesh:
        out = replace(mesh, comments=list(mesh.comments) + [cfg.comment()])
    save_mesh(args.out, out)
    _log(f"densify: {mesh.num_vertices} -> {out.num_vertices} vertices")


def cmd_voxelize(args):
    grid = voxelize(load_mesh(args.mesh), _spec(args))
    grid.dump(args.out)
    _log("voxelize: " + " ".join(f"scale{s}={grid.num_voxels(s)}" for s in range(grid.num_scales)))


def cmd_gen_affinity(args):
    mesh = _labelled_mesh(args)
    grid = voxelize(mesh, _spec(args))
    write_field(args.out, generate_supervision(grid, mesh.label_set()))


def cmd_oracle_affinity(args):
    mesh = _labelled_mesh(args)
    grid = voxelize(mesh, _spec(args))
    seed = args.seed if args.oracle_seed is None else args.oracle_seed
    write_field(args.out, generate_oracle(grid, mesh.label_set(), OracleConfig(args.flip, args.jitter, seed)))


def _write_clusters(path, graph):
    np.savetxt(path, graph.labels(), fmt="%d")


def cmd_cluster(args):
    if args.out is not None and args.semantics is None:
        raise UsageError("cluster: --out requires --semantics")
    if args.out is None and args.clusters_out is None:
        raise UsageError("cluster: give --out and/or --clusters-out")
    mesh = load_mesh(args.mesh)
    field = read_field(args.affinity)
    semantics = load_semantics(args.semantics, mesh.num_original) if args.semantics else None
    graph = _run_cluster(mesh, field, args)
    if args.clusters_out is not None:
        _write_clusters(args.clusters_out, graph)
    if args.out is not None:
        save_instances(args.out, _instances(graph, semantics, field, mesh, args))


def cmd_assemble(args):
    mesh = load_mesh(args.mesh)
    field = read_field(args.affinity)
    semantics = load_semantics(args.semantics, mesh.num_original)
    ids = load_semantics(args.clusters, mesh.num_vertices)
    grid = voxelize(mesh, replace(field.spec, origin=None))
    graph = ClusterGraph.from_labels(grid, ids, mesh.edges)
    save_instances(args.out, _instances(graph, semantics, field, mesh, args))


def cmd_evaluate(args):
    gt = load_labels(args.labels)
    pred = load_instances(args.pred, len(gt))
    classes = ClassTable.load(args.classes) if args.classes else ClassTable.default()
    _report(evaluate(pred, gt, classes), args)


def cmd_pipeline(args):
    mesh = load_mesh(args.mesh)
    labels = load_labels(args.labels, mesh)
    mesh = mesh.with_labels(labels)
    spec = _spec(args)
    work = args.work_dir
    if work is not None:
        work.mkdir(parents=True, exist_ok=True)
    if not args.no_densify:
        mesh = densify(mesh, spec, DensifyConfig(args.samples, args.min_span, args.seed), threads=args.threads)
        _log(f"densify: {labels.semantic.size} -> {mesh.num_vertices} vertices")
        if work is not None:
            save_mesh(work / "densified.ply", mesh)
    if args.affinity is not None:
        field = read_field(args.affinity)
    else:
        grid = voxelize(mesh, spec)
        seed = args.seed if args.oracle_seed is None else args.oracle_seed
        field = generate_oracle(grid, mesh.label_set(), OracleConfig(args.flip, args.jitter, seed)).quantized()
        if work is not None:
            write_field(work / "affinity.txt", field)
    graph = _run_cluster(mesh, field, args)
    seg = _instances(graph, labels.semantic, field, mesh, args)
    if work is not None:
        save_instances(work / "instances.txt", seg)
    _report(evaluate(seg, labels, _classes(args)), args)


COMMANDS = {
    "densify": cmd_densify,
    "voxelize": cmd_voxelize,
    "gen-affinity": cmd_gen_affinity,
    "oracle-affinity": cmd_oracle_affinity,
    "cluster": cmd_cluster,
    "assemble": cmd_assemble,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def run(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(parser, argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        COMMANDS[args.command](args)
    except UsageError as exc:
        _log(str(exc))
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (AffsegError, OSError) as exc:
        _log(f"affseg: {exc}")
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
