"""Rays, their cost tables, and cost normalization.

A ray stores the voxels it crosses (camera outward) and a cost table
``costs[i, l]``: the cost of label ``l`` being the first non-free label at
position ``i``.  Column 0 holds the per-position free-space cost, which is
zero until :func:`transform_nonpositive` moves mass into it.  ``free_cost``
is the cost of the whole ray being free space.

Many rays are packed into a :class:`RayBundle` (flat arrays plus offsets)
so that every per-ray operation can be vectorized over all rays at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np


@dataclass
class Ray:
    voxels: np.ndarray
    costs: np.ndarray
    free_cost: float = 0.0

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.int64).reshape(-1)
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.costs.ndim != 2 or self.costs.shape[0] != self.voxels.shape[0]:
            raise ValueError("costs must have one row per ray position")
        self.free_cost = float(self.free_cost)

    def __len__(self):
        return self.voxels.shape[0]

    @property
    def num_labels(self) -> int:
        return self.costs.shape[1]

    def copy(self) -> "Ray":
        return Ray(self.voxels.copy(), self.costs.copy(), self.free_cost)


class RayBundle:
    """A set of rays stored back to back.

    Position ``p`` of the flat arrays belongs to ray ``ray_id[p]`` at local
    index ``local[p]``; ray ``r`` occupies ``offsets[r]:offsets[r + 1]``.
    """

    def __init__(self, voxels, costs, free_cost, offsets):
        self.voxels = np.asarray(voxels, dtype=np.int64).reshape(-1)
        costs = np.asarray(costs, dtype=np.float64)
        self.costs = costs.reshape(self.voxels.shape[0], costs.shape[-1] if costs.ndim else 0)
        self.free_cost = np.asarray(free_cost, dtype=np.float64).reshape(-1)
        self.offsets = np.asarray(offsets, dtype=np.int64).reshape(-1)
        if self.offsets.shape[0] != self.free_cost.shape[0] + 1:
            raise ValueError("offsets must have one entry more than free_cost")
        if self.offsets[0] != 0 or self.offsets[-1] != self.voxels.shape[0]:
            raise ValueError("offsets do not span the position arrays")
        if np.any(np.diff(self.offsets) < 0):
            raise ValueError("offsets must be non-decreasing")

    @classmethod
    def from_rays(cls, rays: Iterable[Ray], num_labels: int = None) -> "RayBundle":
        rays = list(rays)
        if not rays:
            if num_labels is None:
                raise ValueError("num_labels required for an empty bundle")
            return cls.empty(num_labels)
        lengths = [len(r) for r in rays]
        offsets = np.concatenate([[0], np.cumsum(lengths)])
        return cls(
            np.concatenate([r.voxels for r in rays]),
            np.concatenate([r.costs for r in rays], axis=0),
            [r.free_cost for r in rays],
            offsets,
        )

    @classmethod
    def empty(cls, num_labels: int) -> "RayBundle":
        return cls(np.zeros(0, np.int64), np.zeros((0, num_labels)), np.zeros(0), [0])

    def __len__(self):
        return self.free_cost.shape[0]

    def __getitem__(self, r) -> Ray:
        a, b = self.offsets[r], self.offsets[r + 1]
        return Ray(self.voxels[a:b].copy(), self.costs[a:b].copy(), self.free_cost[r])

    def __iter__(self):
        return (self[r] for r in range(len(self)))

    @property
    def num_positions(self) -> int:
        return self.voxels.shape[0]

    @property
    def num_labels(self) -> int:
        return self.costs.shape[1]

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @cached_property
    def ray_id(self) -> np.ndarray:
        return np.repeat(np.arange(len(self)), self.lengths)

    @cached_property
    def local(self) -> np.ndarray:
        return np.arange(self.num_positions) - self.offsets[self.ray_id]

    @cached_property
    def is_first(self) -> np.ndarray:
        return self.local == 0

    @cached_property
    def has_next(self) -> np.ndarray:
        """True where position ``p + 1`` continues the same ray."""
        out = np.ones(self.num_positions, dtype=bool)
        last = self.offsets[1:][self.lengths > 0] - 1
        out[last] = False
        return out

    @cached_property
    def depth_groups(self) -> List[np.ndarray]:
        """``depth_groups[t]``: flat positions with local index ``t``."""
        if self.num_positions == 0:
            return []
        order = np.argsort(self.local, kind="stable")
        counts = np.bincount(self.local, minlength=int(self.lengths.max()))
        return np.split(order, np.cumsum(counts)[:-1])

    def copy(self) -> "RayBundle":
        return RayBundle(self.voxels.copy(), self.costs.copy(),
                         self.free_cost.copy(), self.offsets.copy())

    def with_costs(self, costs, free_cost) -> "RayBundle":
        out = RayBundle(self.voxels, costs, free_cost, self.offsets)
        # layout caches only depend on offsets
        for key in ("lengths", "ray_id", "local", "is_first", "has_next", "depth_groups"):
            if key in self.__dict__:
                out.__dict__[key] = self.__dict__[key]
        return out


RayLike = Union[Ray, RayBundle]


def as_bundle(rays) -> RayBundle:
    if isinstance(rays, RayBundle):
        return rays
    if isinstance(rays, Ray):
        return RayBundle.from_rays([rays])
    return RayBundle.from_rays(rays)


# ---------------------------------------------------------------------------
# cost tables


def build_depth_costs(ray_length: int, depth_index: int, lam: float, K: float) -> np.ndarray:
    """Depth cost ``min(0, lam * |i - depth_index| - K)`` for each position."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if not 0 <= depth_index < ray_length:
        raise ValueError(f"depth index {depth_index} outside ray of length {ray_length}")
    i = np.arange(ray_length)
    return np.minimum(0.0, lam * np.abs(i - depth_index) - K)


def add_semantic_costs(costs: np.ndarray, scores: Sequence[float], weight: float = 1.0) -> np.ndarray:
    """Add ``weight * scores[l-1]`` to every occupied column ``l >= 1``.

    ``costs`` is a full table with the free-space column first; that column
    is left untouched.
    """
    costs = np.array(costs, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != costs.shape[1] - 1:
        raise ValueError(
            f"expected {costs.shape[1] - 1} occupied-label scores, got {scores.shape[0]}"
        )
    costs[:, 1:] += weight * scores
    return costs


def depth_ray_costs(ray_length: int, depth_index: int, lam: float, K: float,
                    num_labels: int) -> np.ndarray:
    """Full cost table with the depth term replicated over occupied labels."""
    table = np.zeros((ray_length, num_labels))
    table[:, 1:] = build_depth_costs(ray_length, depth_index, lam, K)[:, None]
    return table


def trim_uninformative(ray: Ray) -> Ray:
    """Drop trailing positions whose occupied costs all equal ``free_cost``.

    Having the first occupied voxel there costs the same as an all-free
    ray, so the potential is unchanged for every labeling.  Only valid
    before :func:`transform_nonpositive` (free column must be zero).
    """
    occ = ray.costs[:, 1:]
    informative = np.any(occ != ray.free_cost, axis=1) | (ray.costs[:, 0] != 0)
    keep = np.flatnonzero(informative)
    n = int(keep[-1]) + 1 if keep.size else 0
    return Ray(ray.voxels[:n], ray.costs[:n], ray.free_cost)


# ---------------------------------------------------------------------------
# normalization


def shift_free_cost(rays: RayLike):
    """Fold the all-free cost into the occupied costs.

    Returns the shifted rays and the removed constant per ray (a float for
    a single :class:`Ray`).  ``shifted potential + constant`` equals the
    original potential for every configuration.
    """
    if isinstance(rays, Ray):
        out, const = shift_free_cost(as_bundle(rays))
        return out[0], float(const[0])
    costs = rays.costs.copy()
    const = rays.free_cost.copy()
    costs[:, 1:] -= const[rays.ray_id][:, None]
    return rays.with_costs(costs, np.zeros_like(const)), const


def transform_nonpositive(rays: RayLike):
    """Make every cost non-positive without changing the minimizer.

    Walking each ray from its last position to the first, the largest cost
    at position ``i`` is subtracted from all labels there and added to the
    free-space cost of position ``i - 1``.  What is pushed out in front of
    position 0 is returned as the omitted constant.
    """
    if isinstance(rays, Ray):
        out, const = transform_nonpositive(as_bundle(rays))
        return out[0], float(const[0])
    if np.any(rays.free_cost != 0):
        raise ValueError("shift_free_cost must be applied first")
    costs = rays.costs.copy()
    const = np.zeros(len(rays))
    groups = rays.depth_groups
    for t in range(len(groups) - 1, -1, -1):
        pos = groups[t]
        m = costs[pos].max(axis=1)
        costs[pos] -= m[:, None]
        if t > 0:
            costs[pos - 1, 0] += m
        else:
            const[rays.ray_id[pos]] = m
    return rays.with_costs(costs, rays.free_cost.copy()), const


def normalize(rays: RayLike):
    """Shift then transform; returns rays and the total omitted constant per ray."""
    shifted, c1 = shift_free_cost(rays)
    out, c2 = transform_nonpositive(shifted)
    return out, c1 + c2


def binary_ray_potential(ray: Ray, labels_along: np.ndarray) -> float:
    """Potential of a ray for a binary labeling of its voxels.

    Cost of the first non-free label (plus the free-space costs of the
    positions in front of it), or the free-space costs plus ``free_cost``
    when the whole ray is free.
    """
    labels_along = np.asarray(labels_along)
    occ = np.flatnonzero(labels_along != 0)
    if occ.size == 0:
        return float(ray.costs[:, 0].sum() + ray.free_cost)
    k = int(occ[0])
    return float(ray.costs[:k, 0].sum() + ray.costs[k, labels_along[k]])


# ---------------------------------------------------------------------------
# traversal


def ray_box_interval(origins, dirs, lower, upper) -> Tuple[np.ndarray, np.ndarray]:
    """Slab test: parameter interval ``[t0, t1]`` of each ray inside the box.

    Rays start at ``t = 0``; a miss gives ``t1 <= t0``.
    """
    origins = np.atleast_2d(origins).astype(float)
    dirs = np.atleast_2d(dirs).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lower - origins) / dirs
        tb = (upper - origins) / dirs
    tlo = np.minimum(ta, tb)
    thi = np.maximum(ta, tb)
    parallel = dirs == 0
    inside = (origins >= lower) & (origins <= upper)
    tlo = np.where(parallel, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(parallel, np.where(inside, np.inf, -np.inf), thi)
    t0 = np.maximum(tlo.max(axis=1), 0.0)
    t1 = thi.min(axis=1)
    return t0, t1


def traverse(origins, dirs, grid):
    """Voxels crossed by each ray, in order of increasing distance.

    Incremental grid stepping (one axis crossing per step), vectorized over
    rays.  Returns ``(voxels, t_enter, offsets, t_exit)``: flat linear voxel
    indices, the ray parameter where each voxel is entered, per-ray offsets
    into the flat arrays, and the parameter where each ray leaves the grid.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    nray = origins.shape[0]
    dims = np.asarray(grid.dims)
    vs = grid.voxel_size
    # voxel units: p(t) = (o + t d - origin) / vs
    p = (origins - grid.lower) / vs
    d = dirs / vs
    t0, t1 = ray_box_interval(p, d, np.zeros(3), dims.astype(float))
    hit = t1 > t0

    q = p + np.where(hit, t0, 0.0)[:, None] * d
    cell = np.where(d < 0, np.ceil(q) - 1, np.floor(q))
    cell = np.clip(cell, 0, dims - 1).astype(np.int64)
    step = np.where(d > 0, 1, np.where(d < 0, -1, 0))
    with np.errstate(divide="ignore", invalid="ignore"):
        next_bound = np.where(d > 0, cell + 1, cell).astype(float)
        tmax = np.where(d != 0, (next_bound - p) / d, np.inf)
        tdelta = np.where(d != 0, 1.0 / np.abs(d), np.inf)

    active = np.flatnonzero(hit)
    t_cur = t0.copy()
    rec_ray, rec_vox, rec_t = [], [], []
    stride = np.array([dims[1] * dims[2], dims[2], 1])
    while active.size:
        c = cell[active]
        rec_ray.append(active)
        rec_vox.append(c @ stride)
        rec_t.append(t_cur[active])
        tm = tmax[active]
        axis = np.argmin(tm, axis=1)
        rows = np.arange(active.size)
        t_next = tm[rows, axis]
        c[rows, axis] += step[active, axis]
        inb = np.all((c >= 0) & (c < dims), axis=1)
        go = (t_next < t1[active]) & inb
        tm[rows, axis] += tdelta[active, axis]
        cell[active] = c
        tmax[active] = tm
        t_cur[active] = t_next
        active = active[go]

    if rec_ray:
        ray_all = np.concatenate(rec_ray)
        order = np.argsort(ray_all, kind="stable")
        voxels = np.concatenate(rec_vox)[order]
        t_enter = np.concatenate(rec_t)[order]
        counts = np.bincount(ray_all, minlength=nray)
    else:
        voxels = np.zeros(0, np.int64)
        t_enter = np.zeros(0)
        counts = np.zeros(nray, np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return voxels, t_enter, offsets, np.where(hit, t1, t0)


def brute_force_traverse(origin, direction, grid, eps=1e-9):
    """Reference traversal: slab-test every voxel, sort by entry parameter."""
    n = grid.size
    ijk = grid.delinearize(np.arange(n))
    lo = grid.lower + ijk * grid.voxel_size
    hi = lo + grid.voxel_size
    o = np.broadcast_to(np.asarray(origin, float), (n, 3))
    dvec = np.broadcast_to(np.asarray(direction, float), (n, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - o) / dvec
        tb = (hi - o) / dvec
    tlo = np.minimum(ta, tb)
    thi = np.maximum(ta, tb)
    par = dvec == 0
    inside = (o >= lo) & (o < hi)
    tlo = np.where(par, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(par, np.where(inside, np.inf, -np.inf), thi)
    a = np.maximum(tlo.max(axis=1), 0.0)
    b = thi.min(axis=1)
    sel = np.flatnonzero(b - a > eps)
    return sel[np.argsort(a[sel], kind="stable")]
