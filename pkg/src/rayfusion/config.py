"""JSON run configuration.

Schema (paths are relative to the config file)::

    {
      "grid":   {"dims": [nx, ny, nz], "origin": [0, 0, 0], "voxel_size": 1.0},
      "labels": {"count": 2, "names": ["free", "occupied"]},
      "rays":   {"lambda": 0.5, "K": 3.0, "semantic_weight": 1.0, "pixel_stride": 1,
                 "missing_depth": "semantic" | "skip", "beyond_grid": "free" | "drop"},
      "smoothness": {"isotropic": w, "norm": 1}           # w scalar or label x label matrix
                  | {"anisotropic": [{"pair": [l, m], "matrix": 3x3}, ...], "default": w},
      "solver": {"inner_iters": 10, "max_outer": 300, "rel_energy_tol": 1e-6,
                 "tie_branch": "ZERO" | "LINEAR", "gap_check": false},
      "views":  [{"camera": "v0.cam.txt", "depth": "v0.depth.pfm",
                  "semantics": "v0"}],                    # reads v0.label<l>.pfm
      "output": {"dir": "out", "volume": "labels.vol", "trace": "trace.csv",
                 "relaxed": null, "slices_dir": "slices", "mesh": "mesh.ply"},
      "threads": 1,
      "seed": 0
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .grid import LabelSpace, VoxelGrid
from .ingest import DepthMap, RayOptions, SemanticScores, View
from .io import FormatError, read_camera, read_pfm
from .regularizer import SmoothnessModel
from .solver import SolverConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field or path."""


@dataclass
class ViewSpec:
    camera: Path
    depth: Optional[Path] = None
    semantics: Optional[Path] = None


@dataclass
class RunConfig:
    grid: VoxelGrid
    labels: LabelSpace
    ray_options: RayOptions
    model: SmoothnessModel
    solver: SolverConfig
    views: List[ViewSpec]
    output_dir: Path
    volume_name: str = "labels.vol"
    trace_name: str = "trace.csv"
    relaxed_name: Optional[str] = None
    slices_dir: str = "slices"
    mesh_name: str = "mesh.ply"
    threads: int = 1
    seed: int = 0
    base: Path = field(default_factory=Path)

    def load_views(self) -> List[View]:
        views = []
        for i, view in enumerate(self.views):
            where = f"views[{i}]"
            try:
                cam = read_camera(view.camera)
                depth = DepthMap(read_pfm(view.depth)) if view.depth else None
                sem = None
                if view.semantics is not None:
                    chans = [read_pfm(f"{view.semantics}.label{l}.pfm")
                             for l in range(self.labels.count)]
                    sem = SemanticScores(np.stack(chans, axis=-1))
            except (OSError, FormatError) as exc:
                raise ConfigError(f"{where}: {exc}") from None
            except ValueError as exc:
                raise ConfigError(f"{where}.camera: {exc}") from None
            if depth is not None and (depth.width, depth.height) != cam.image_size:
                raise ConfigError(f"{where}.depth: size {depth.width}x{depth.height} does not "
                                  f"match camera {cam.image_size[0]}x{cam.image_size[1]}")
            views.append(View(cam, depth, sem, name=view.camera.stem))
        return views


def _get(d: dict, key: str, where: str, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"missing field {where}.{key}" if where else f"missing field {key}")
        return default
    return d[key]


def _number(value, where, lo=None, integer=False, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"{where}: must be positive")
    if lo is not None and value < lo:
        raise ConfigError(f"{where}: must be >= {lo}")
    return int(value) if integer else float(value)


def _model(entry: dict, count: int) -> SmoothnessModel:
    if not isinstance(entry, dict):
        raise ConfigError("smoothness: expected an object")
    try:
        if "anisotropic" in entry:
            metrics = {}
            for i, item in enumerate(entry["anisotropic"]):
                l, m = item["pair"]
                metrics[(int(l), int(m))] = np.asarray(item["matrix"], dtype=float)
            return SmoothnessModel.anisotropic(count, metrics, float(entry.get("default", 0.0)))
        order = entry.get("norm", 1)
        if order not in (1, 2):
            raise ConfigError("smoothness.norm: expected 1 or 2")
        return SmoothnessModel.isotropic(count, entry.get("isotropic", 0.0), order)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"smoothness: {exc}") from None


def _path(base: Path, value, where: str, must_exist=True) -> Path:
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a path string")
    p = (base / value).resolve()
    if must_exist and not p.exists():
        raise ConfigError(f"{where}: file not found: {p}")
    return p


def parse_config(data: dict, base: Path = Path(".")) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    g = _get(data, "grid", "", required=True)
    dims = _get(g, "dims", "grid", required=True)
    if not isinstance(dims, list) or len(dims) != 3:
        raise ConfigError("grid.dims: expected 3 integers")
    dims = [_number(d, f"grid.dims[{i}]", integer=True, positive=True) for i, d in enumerate(dims)]
    origin = _get(g, "origin", "grid", [0.0, 0.0, 0.0])
    if not isinstance(origin, list) or len(origin) != 3:
        raise ConfigError("grid.origin: expected 3 numbers")
    origin = [_number(o, f"grid.origin[{i}]") for i, o in enumerate(origin)]
    vs = _number(_get(g, "voxel_size", "grid", 1.0), "grid.voxel_size", positive=True)
    grid = VoxelGrid(tuple(dims), tuple(origin), vs)

    lab = _get(data, "labels", "", {"count": 2})
    count = _number(_get(lab, "count", "labels", required=True), "labels.count", lo=2, integer=True)
    names = _get(lab, "names", "labels")
    if names is not None and len(names) != count:
        raise ConfigError("labels.names: one name per label required")
    labels = LabelSpace(count, tuple(names) if names else None)

    r = _get(data, "rays", "", {})
    opts = RayOptions(
        lam=_number(_get(r, "lambda", "rays", 0.5), "rays.lambda", lo=0.0),
        K=_number(_get(r, "K", "rays", 3.0), "rays.K"),
        semantic_weight=_number(_get(r, "semantic_weight", "rays", 1.0), "rays.semantic_weight"),
        pixel_stride=_number(_get(r, "pixel_stride", "rays", 1), "rays.pixel_stride",
                             integer=True, positive=True),
        missing_depth=_get(r, "missing_depth", "rays", "semantic"),
        beyond_grid=_get(r, "beyond_grid", "rays", "free"),
    )
    if opts.missing_depth not in ("semantic", "skip"):
        raise ConfigError("rays.missing_depth: expected 'semantic' or 'skip'")
    if opts.beyond_grid not in ("free", "drop"):
        raise ConfigError("rays.beyond_grid: expected 'free' or 'drop'")

    model = _model(_get(data, "smoothness", "", {"isotropic": 0.0}), count)

    s = _get(data, "solver", "", {})
    try:
        solver = SolverConfig(
            inner_iters=_number(_get(s, "inner_iters", "solver", 10), "solver.inner_iters",
                                integer=True, positive=True),
            max_outer=_number(_get(s, "max_outer", "solver", 300), "solver.max_outer",
                              integer=True, positive=True),
            rel_energy_tol=_number(_get(s, "rel_energy_tol", "solver", 1e-6),
                                   "solver.rel_energy_tol", lo=0.0),
            tie_branch=_get(s, "tie_branch", "solver", "ZERO"),
            gap_check=bool(_get(s, "gap_check", "solver", False)),
        )
    except KeyError as exc:
        raise ConfigError(f"solver.tie_branch: unknown branch {exc}") from None

    views = []
    for i, v in enumerate(_get(data, "views", "", [])):
        where = f"views[{i}]"
        if not isinstance(v, dict):
            raise ConfigError(f"{where}: expected an object")
        cam = _path(base, _get(v, "camera", where, required=True), f"{where}.camera")
        depth = v.get("depth")
        depth = _path(base, depth, f"{where}.depth") if depth is not None else None
        sem = v.get("semantics")
        if sem is not None:
            sem = _path(base, sem, f"{where}.semantics", must_exist=False)
            for l in range(count):
                f = Path(f"{sem}.label{l}.pfm")
                if not f.exists():
                    raise ConfigError(f"{where}.semantics: file not found: {f}")
        views.append(ViewSpec(cam, depth, sem))

    out = _get(data, "output", "", {})
    threads = _number(_get(data, "threads", "", 1), "threads", integer=True, positive=True)
    seed = _number(_get(data, "seed", "", 0), "seed", integer=True, lo=0)
    return RunConfig(
        grid=grid, labels=labels, ray_options=opts, model=model, solver=solver, views=views,
        output_dir=_path(base, out.get("dir", "out"), "output.dir", must_exist=False),
        volume_name=out.get("volume", "labels.vol"),
        trace_name=out.get("trace", "trace.csv"),
        relaxed_name=out.get("relaxed"),
        slices_dir=out.get("slices_dir", "slices"),
        mesh_name=out.get("mesh", "mesh.ply"),
        threads=threads, seed=seed, base=base,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data, path.resolve().parent)
