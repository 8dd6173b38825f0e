"""Command-line entry point: ``rayfusion <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .grid import LabelSpace, VoxelGrid
from .io import FormatError, read_volume, write_pgm, write_ply, write_trace, write_volume
from .mesh import boundary_mesh
from .raypot import Branch

log = logging.getLogger("rayfusion")


def _parse_slices(text: str):
    out = []
    for item in text.split(","):
        try:
            axis, index = item.split(":")
            out.append(("xyz".index(axis) if axis in "xyz" else int(axis), int(index)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad slice {item!r}, expected axis:index") from None
    return out


def _set_threads(n: int):
    # the compiled sweeps run in sequential order, so only one thread is used
    if n > 1:
        log.info("ignoring thread count %d: the solver is single-threaded", n)


def cmd_reconstruct(args) -> int:
    from .ingest import build_rays
    from .oracle import slice_image
    from .rays import normalize
    from .solver import Problem, reconstruct

    cfg = load_config(args.config)
    _set_threads(args.threads or cfg.threads)
    views = cfg.load_views()
    rays = build_rays(views, cfg.grid, cfg.labels.count, cfg.ray_options)
    log.info("%d views, %d rays, %d ray positions", len(views), len(rays), rays.num_positions)
    bundle, const = normalize(rays)
    problem = Problem(cfg.grid, bundle, cfg.model, const)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = reconstruct(problem, cfg.solver)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_volume(out / cfg.volume_name, result.labeling)
    write_trace(out / cfg.trace_name, result.trace)
    if cfg.relaxed_name:
        write_volume(out / cfg.relaxed_name, result.relaxed)
    if args.emit_slices:
        sdir = out / cfg.slices_dir
        sdir.mkdir(exist_ok=True)
        for axis, index in args.emit_slices:
            write_pgm(sdir / f"slice_{'xyz'[axis]}{index:04d}.pgm", slice_image(result.relaxed, axis, index))
    if args.emit_mesh:
        write_ply(out / cfg.mesh_name, *boundary_mesh(result.labeling))
    rep = result.report
    print(f"energy {rep.total:.10g} (ray {rep.ray_term:.10g}, smoothness {rep.smoothness_term:.10g}, "
          f"omitted constants {rep.omitted_constants:.10g})")
    print(f"outer steps {len(result.trace)}, inner iterations {result.inner_iterations}")
    print(f"wrote {out / cfg.volume_name}")
    return 0


def cmd_demo(args) -> int:
    from .oracle import TinyInstance, convex_relaxation_solve
    from .rays import Ray
    from .regularizer import SmoothnessModel
    from .solver import SolverConfig, reconstruct

    grid = VoxelGrid((3, 1, 1))
    ray = Ray(np.arange(3), np.array([[0.0, -2.0], [0.0, -3.0], [0.0, -2.0]]), 0.0)
    inst = TinyInstance(grid, [ray], SmoothnessModel(2), LabelSpace(2))
    field, energy, y = convex_relaxation_solve(inst)
    print("single ray, occupied costs -2 -3 -2, no regularizer")
    print(f"relaxation without visibility consistency: energy {energy:.6f}")
    print("  x_occupied  " + " ".join(f"{v:.4f}" for v in field.values[:, 1]))
    print("  y_occupied  " + " ".join(f"{v:.4f}" for v in y[:, 1]))
    print("  y_free      " + " ".join(f"{v:.4f}" for v in y[:, 0]))
    for tie in (Branch.LINEAR, Branch.ZERO):
        rec = reconstruct(inst.problem(), SolverConfig(tie_branch=tie))
        occ = np.flatnonzero(rec.labeling.labels != 0)
        first = int(occ[0]) if occ.size else None
        print(f"majorize-minimize, tie branch {tie.name}: energy {rec.report.original:.6f}, "
              f"labels {rec.labeling.labels.tolist()}, first occupied position {first}")
    return 0


def cmd_validate(args) -> int:
    from .validate import run_suites

    results = run_suites(args.seed, args.trials)
    failed = 0
    for r in results:
        status = "ok" if r.failed == 0 else "FAIL"
        print(f"{r.name:15s} {r.passed:5d} passed {r.failed:5d} failed  {status}")
        for m in r.messages:
            print(f"    {m}")
        failed += r.failed
    if not results:
        print("no trials requested")
    return 1 if failed else 0


def cmd_export_mesh(args) -> int:
    grid = None
    vol = read_volume(args.inp)
    if args.origin is not None or args.voxel_size is not None:
        grid = VoxelGrid(vol.grid.dims, tuple(args.origin or (0, 0, 0)), args.voxel_size or 1.0)
        vol = read_volume(args.inp, grid)
    if not hasattr(vol, "labels"):
        raise FormatError(f"{args.inp}: mesh export needs a binary label volume")
    v, f, c = boundary_mesh(vol)
    write_ply(args.out, v, f, c)
    print(f"{len(f)} triangles written to {args.out}")
    return 0


def cmd_synth(args) -> int:
    from .synth import SCENES, write_scene

    scene = SCENES[args.scene](**({"image_size": args.image_size} if args.image_size else {}))
    path = write_scene(scene, args.out, smoothness=args.smoothness,
                       inner_iters=10, max_outer=args.max_outer)
    print(f"wrote {len(scene.views)} views and {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rayfusion", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("reconstruct", help="fuse depth maps into a label volume")
    r.add_argument("--config", required=True)
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--emit-slices", type=_parse_slices, default=None, metavar="AXIS:INDEX,...")
    r.add_argument("--emit-mesh", action="store_true")
    r.set_defaults(func=cmd_reconstruct)

    d = sub.add_parser("demo", help="small worked examples")
    d.add_argument("name", choices=["weak-relaxation"])
    d.set_defaults(func=cmd_demo)

    v = sub.add_parser("validate", help="randomized property checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int, default=20)
    v.set_defaults(func=cmd_validate)

    m = sub.add_parser("export-mesh", help="boundary mesh of a label volume")
    m.add_argument("--in", dest="inp", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--origin", type=float, nargs=3, default=None)
    m.add_argument("--voxel-size", type=float, default=None)
    m.set_defaults(func=cmd_export_mesh)

    s = sub.add_parser("synth", help="write a synthetic scene and config")
    s.add_argument("--scene", choices=["sphere", "wall", "box"], required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--smoothness", type=float, default=0.1)
    s.add_argument("--max-outer", type=int, default=100)
    s.add_argument("--image-size", type=int, default=None, help="depth map width and height in pixels")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
