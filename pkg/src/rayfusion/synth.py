"""Synthetic scenes with analytic geometry and noiseless depth maps.

Depth is rendered by intersecting each pixel ray with the shape; pixels that
see no surface get ``+inf`` (open background).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List

import numpy as np

from .grid import VoxelGrid
from .ingest import Camera, DepthMap, View
from .rays import ray_box_interval


@dataclass
class Scene:
    name: str
    grid: VoxelGrid
    views: List[View]
    occupancy: np.ndarray          # bool, shape grid.dims
    num_labels: int = 2
    settings: dict = field(default_factory=dict)


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` roughly uniform unit vectors on the sphere."""
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def _up_for(direction):
    return np.array([0.0, 0.0, 1.0]) if abs(direction[2]) < 0.9 else np.array([0.0, 1.0, 0.0])


def render_depth(camera: Camera, hit: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> DepthMap:
    """Depth map of a shape given ``hit(origins, dirs) -> t`` (inf on a miss).

    Directions are scaled to unit camera depth, so ``t`` is the depth.
    """
    vv, uu = np.mgrid[0:camera.height, 0:camera.width]
    pix = np.column_stack([uu.ravel(), vv.ravel()])
    dirs = camera.pixel_rays(pix)
    origins = np.broadcast_to(camera.center, dirs.shape)
    t = hit(origins, dirs)
    return DepthMap(t.reshape(camera.height, camera.width))


def sphere_hit(center, radius):
    center = np.asarray(center, dtype=float)

    def hit(origins, dirs):
        oc = origins - center
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = np.einsum("ij,ij->i", oc, dirs)
        c = np.einsum("ij,ij->i", oc, oc) - radius ** 2
        disc = b * b - a * c
        t = (-b - np.sqrt(np.maximum(disc, 0))) / a
        return np.where((disc >= 0) & (t > 0), t, np.inf)
    return hit


def boxes_hit(boxes):
    """Nearest hit over axis-aligned boxes given as ``(lower, upper)`` pairs."""
    def hit(origins, dirs):
        best = np.full(len(dirs), np.inf)
        for lo, hi in boxes:
            t0, t1 = ray_box_interval(origins, dirs, np.asarray(lo, float), np.asarray(hi, float))
            ok = t1 > t0
            best = np.where(ok & (t0 < best), t0, best)
        return best
    return hit


def ring_cameras(center, distance, directions, focal, size) -> List[Camera]:
    center = np.asarray(center, dtype=float)
    cams = []
    for d in directions:
        d = np.asarray(d, float) / np.linalg.norm(d)
        cams.append(Camera.look_at(center + distance * d, center, _up_for(d), focal, size, size))
    return cams


def _focal_for(half_extent, distance, size, fill=0.85):
    """Focal length that maps a disk of ``half_extent`` at ``distance`` to ``fill`` of the image."""
    return fill * (size / 2.0) * distance / half_extent


def sphere_scene(n: int = 64, radius: float = 20.0, num_views: int = 20,
                 image_size: int = 48, distance: float = 80.0) -> Scene:
    grid = VoxelGrid((n, n, n))
    center = np.full(3, n / 2.0)
    focal = _focal_for(radius * 1.15, distance, image_size)
    cams = ring_cameras(center, distance, fibonacci_directions(num_views), focal, image_size)
    hit = sphere_hit(center, radius)
    views = [View(c, render_depth(c, hit), name=f"view{i:02d}") for i, c in enumerate(cams)]
    occ = np.linalg.norm(grid.centers() - center, axis=1) < radius
    return Scene("sphere", grid, views, occ.reshape(grid.dims),
                 settings=dict(radius=radius, center=center.tolist()))


def wall_scene(n: int = 24, thickness: int = 1, margin: int = 4,
               image_size: int = 40, distance: float = 40.0) -> Scene:
    """A one-voxel slab perpendicular to x, seen by cameras on both sides."""
    grid = VoxelGrid((n, n, n))
    x0 = n // 2
    lo = np.array([x0, margin, margin], float)
    hi = np.array([x0 + thickness, n - margin, n - margin], float)
    center = np.full(3, n / 2.0)
    dirs = []
    for side in (-1.0, 1.0):
        for dy, dz in ((0, 0), (0.35, 0), (-0.35, 0), (0, 0.35), (0, -0.35)):
            dirs.append([side, dy, dz])
    focal = _focal_for(n / 2.0 * 1.2, distance, image_size, fill=1.0)
    cams = ring_cameras(center, distance, dirs, focal, image_size)
    hit = boxes_hit([(lo, hi)])
    views = [View(c, render_depth(c, hit), name=f"view{i:02d}") for i, c in enumerate(cams)]
    occ = np.zeros(grid.dims, dtype=bool)
    occ[x0:x0 + thickness, margin:n - margin, margin:n - margin] = True
    return Scene("wall", grid, views, occ)


def box_scene(n: int = 16, half: float = 3.0, num_views: int = 12,
              image_size: int = 32, distance: float = 30.0) -> Scene:
    grid = VoxelGrid((n, n, n))
    center = np.full(3, n / 2.0)
    lo, hi = center - half, center + half
    focal = _focal_for(n / 2.0 * 1.2, distance, image_size, fill=1.0)
    cams = ring_cameras(center, distance, fibonacci_directions(num_views), focal, image_size)
    hit = boxes_hit([(lo, hi)])
    views = [View(c, render_depth(c, hit), name=f"view{i:02d}") for i, c in enumerate(cams)]
    c = grid.centers()
    occ = np.all((c > lo) & (c < hi), axis=1).reshape(grid.dims)
    return Scene("box", grid, views, occ)


SCENES = {"sphere": sphere_scene, "wall": wall_scene, "box": box_scene}


def write_scene(scene: Scene, out_dir, smoothness: float = 0.1, **solver) -> Path:
    """Write cameras, depth maps and a ready-to-run config; returns the config path."""
    from .io import write_camera, write_pfm

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    views = []
    for v in scene.views:
        write_camera(out / f"{v.name}.cam.txt", v.camera)
        write_pfm(out / f"{v.name}.depth.pfm", v.depth.depth)
        views.append({"camera": f"{v.name}.cam.txt", "depth": f"{v.name}.depth.pfm"})
    np.save(out / "occupancy.npy", scene.occupancy)
    g = scene.grid
    config = {
        "grid": {"dims": list(g.dims), "origin": list(g.origin), "voxel_size": g.voxel_size},
        "labels": {"count": scene.num_labels, "names": ["free", "occupied"][: scene.num_labels]},
        "rays": {"lambda": 0.5, "K": 3.0},
        "smoothness": {"isotropic": smoothness},
        "solver": solver,
        "views": views,
        "output": {"dir": "out"},
    }
    path = out / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n")
    return path
