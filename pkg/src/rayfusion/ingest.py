"""Cameras, depth and semantic maps, and construction of per-pixel rays."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .grid import VoxelGrid
from .rays import Ray, RayBundle, depth_ray_costs, trim_uninformative, traverse

log = logging.getLogger(__name__)


@dataclass
class Camera:
    """Pinhole camera mapping world ``X`` to pixels via ``K (R X + t)``.

    Pixel ``(u, v)`` refers to the pixel center at column ``u``, row ``v``.
    """

    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=float).reshape(3, 3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        R = self.rotation
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
            raise ValueError("rotation is not orthonormal with det +1")

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def pixel_rays(self, pixels) -> np.ndarray:
        """World directions through pixel centers, scaled to unit depth."""
        pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
        if abs(np.linalg.det(self.intrinsics)) < 1e-12:
            raise ValueError("singular intrinsics")
        hom = np.concatenate([pixels, np.ones((pixels.shape[0], 1))], axis=1)
        cam = np.linalg.solve(self.intrinsics, hom.T)
        return (self.rotation.T @ cam).T

    def project(self, points) -> np.ndarray:
        """Pixel coordinates and depth of world points, shape ``(n, 3)``."""
        points = np.atleast_2d(points)
        cam = points @ self.rotation.T + self.translation
        img = cam @ self.intrinsics.T
        return np.column_stack([img[:, :2] / img[:, 2:3], cam[:, 2]])

    @classmethod
    def look_at(cls, eye, target, up, focal, width, height) -> "Camera":
        eye, target, up = (np.asarray(a, dtype=float) for a in (eye, target, up))
        zc = target - eye
        zc /= np.linalg.norm(zc)
        xc = np.cross(zc, up)
        if np.linalg.norm(xc) < 1e-9:
            xc = np.cross(zc, [1.0, 0.0, 0.0] if abs(zc[0]) < 0.9 else [0.0, 1.0, 0.0])
        xc /= np.linalg.norm(xc)
        yc = np.cross(zc, xc)
        R = np.stack([xc, yc, zc])
        K = np.array([[focal, 0, (width - 1) / 2.0],
                      [0, focal, (height - 1) / 2.0],
                      [0, 0, 1.0]])
        return cls(K, R, -R @ eye, (width, height))


@dataclass
class DepthMap:
    """Depth along the optical axis; values ``<= 0`` (or NaN) mark missing depth."""

    depth: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def valid(self) -> np.ndarray:
        return self.depth > 0


@dataclass
class SemanticScores:
    """Per-pixel classifier costs, ``scores[v, u, l]`` for every label."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim != 3:
            raise ValueError("scores must be (height, width, labels)")


@dataclass
class RayOptions:
    lam: float = 0.5
    K: float = 3.0
    semantic_weight: float = 1.0
    pixel_stride: int = 1
    # pixels with missing depth: "semantic" keeps a semantics-only ray when
    # scores exist, "skip" drops them
    missing_depth: str = "semantic"
    # measured depth behind the far side of the volume: "free" turns the ray
    # into evidence that everything it crosses is empty, "drop" discards it
    beyond_grid: str = "free"
    trim: bool = True


@dataclass
class View:
    camera: Camera
    depth: Optional[DepthMap] = None
    semantics: Optional[SemanticScores] = None
    name: str = ""


def _pixel_grid(width, height, stride):
    vv, uu = np.mgrid[0:height:stride, 0:width:stride]
    return np.column_stack([uu.ravel(), vv.ravel()])


def view_rays(view: View, grid: VoxelGrid, num_labels: int, opts: RayOptions) -> List[Ray]:
    """Build the (un-normalized) rays of one view."""
    cam = view.camera
    if view.depth is not None and (view.depth.width, view.depth.height) != cam.image_size:
        raise ValueError(f"depth map size does not match camera for view {view.name!r}")
    pix = _pixel_grid(cam.width, cam.height, max(1, int(opts.pixel_stride)))
    dirs = cam.pixel_rays(pix)
    origins = np.broadcast_to(cam.center, dirs.shape)
    voxels, t_enter, offsets, t_exit = traverse(origins, dirs, grid)

    depth = None
    if view.depth is not None:
        depth = view.depth.depth[pix[:, 1], pix[:, 0]]
    sem = None
    if view.semantics is not None:
        sem = view.semantics.scores[pix[:, 1], pix[:, 0], :]
        if sem.shape[1] != num_labels:
            raise ValueError(f"expected {num_labels} semantic channels, got {sem.shape[1]}")

    # nudge the measured point slightly behind the surface so a depth that
    # lands exactly on a voxel face selects the voxel behind it
    nudge = 1e-6 * grid.voxel_size / np.linalg.norm(dirs, axis=1)
    rays = []
    for r in range(pix.shape[0]):
        a, b = offsets[r], offsets[r + 1]
        if a == b:
            continue
        n = b - a
        free_cost = 0.0
        # NaN compares False, +inf counts as "nothing hit in range"
        if depth is not None and depth[r] > 0:
            t = depth[r] + nudge[r]
            if t < t_enter[a]:
                continue  # occluder in front of the volume
            if t >= t_exit[r]:
                if opts.beyond_grid == "drop":
                    continue
                costs = np.zeros((n, num_labels))
                free_cost = -opts.K
            else:
                i_d = int(np.searchsorted(t_enter[a:b], t, side="right") - 1)
                costs = depth_ray_costs(n, i_d, opts.lam, opts.K, num_labels)
        else:
            if sem is None or opts.missing_depth == "skip":
                continue
            costs = np.zeros((n, num_labels))
        if sem is not None:
            costs[:, 1:] += opts.semantic_weight * sem[r, 1:]
        ray = Ray(voxels[a:b], costs, free_cost)
        if opts.trim:
            ray = trim_uninformative(ray)
        if len(ray):
            rays.append(ray)
    return rays


def build_rays(views: Sequence[View], grid: VoxelGrid, num_labels: int,
               opts: RayOptions = None) -> RayBundle:
    opts = opts or RayOptions()
    rays: List[Ray] = []
    for view in views:
        got = view_rays(view, grid, num_labels, opts)
        log.debug("view %s: %d rays", view.name, len(got))
        rays.extend(got)
    return RayBundle.from_rays(rays, num_labels)


def traverse_ray(camera: Camera, pixel, grid: VoxelGrid) -> np.ndarray:
    """Ordered linear voxel indices crossed by the ray through ``pixel``."""
    u, v = pixel
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise ValueError(f"pixel {pixel} outside image")
    d = camera.pixel_rays([pixel])
    voxels, _, _, _ = traverse(camera.center[None], d, grid)
    return voxels
