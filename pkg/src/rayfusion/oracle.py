"""Exhaustive minimization on tiny instances and the visibility-free relaxation.

These are verification tools: :func:`brute_force_minimize` evaluates the
exact energy of every binary labeling, and :func:`convex_relaxation_solve`
solves the relaxation that drops the visibility-consistency constraint,
reusing the solver's primal-dual kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .grid import BinaryLabeling, LabelField, LabelSpace, VoxelGrid, uniform_init
from .rays import Ray, RayBundle, as_bundle, normalize
from .raypot import build_visibility
from .regularizer import SmoothnessModel, binary_smoothness
from .solver import PrimalDual, Problem, make_feasible, total_energy

MAX_VOXELS = 12
MAX_LABELS = 3
MAX_CONFIGS = 531_441  # 3 ** 12


@dataclass
class TinyInstance:
    grid: VoxelGrid
    rays: List[Ray]
    model: SmoothnessModel
    labels: LabelSpace

    def __post_init__(self):
        if self.grid.size > MAX_VOXELS or self.labels.count > MAX_LABELS:
            raise ValueError("instance exceeds the enumeration bound")
        if self.model.num_labels != self.labels.count:
            raise ValueError("smoothness model and label space disagree")

    @property
    def num_configs(self) -> int:
        return self.labels.count ** self.grid.size

    def problem(self) -> Problem:
        """Normalized solver problem (constants kept for the original scale)."""
        bundle = RayBundle.from_rays(self.rays, self.labels.count)
        norm, consts = normalize(bundle)
        return Problem(self.grid, norm, self.model, consts)


def _enumerate(n_labels: int, n_voxels: int, start: int, stop: int) -> np.ndarray:
    """Labelings ``start..stop`` in lexicographic order (voxel 0 most significant)."""
    codes = np.arange(start, stop)
    powers = n_labels ** np.arange(n_voxels - 1, -1, -1)
    return (codes[:, None] // powers) % n_labels


def ray_terms(rays: Sequence[Ray], labels: np.ndarray) -> np.ndarray:
    """Exact ray potential summed over rays for a batch of labelings.

    The cost of a ray is the cost of its first occupied position, or its
    free cost when every position is free.
    """
    labels = np.atleast_2d(labels)
    out = np.zeros(labels.shape[0])
    for ray in rays:
        along = labels[:, ray.voxels]                    # (batch, n)
        occ = along != 0
        any_occ = occ.any(axis=1)
        k = np.argmax(occ, axis=1)
        free_prefix = np.concatenate(
            [np.zeros(1), np.cumsum(ray.costs[:, 0])])   # sum_{i<k} c_i^f
        rows = np.arange(labels.shape[0])
        hit = free_prefix[k] + ray.costs[k, along[rows, k]]
        miss = free_prefix[-1] + ray.free_cost
        out += np.where(any_occ, hit, miss)
    return out


def labeling_energy(inst: TinyInstance, labels: np.ndarray) -> np.ndarray:
    return ray_terms(inst.rays, labels) + binary_smoothness(labels, inst.grid, inst.model)


def brute_force_minimize(inst: TinyInstance, chunk: int = 65536) -> Tuple[BinaryLabeling, float]:
    """Global minimizer over all labelings; ties go to the lexicographically smallest."""
    n = inst.num_configs
    if n > MAX_CONFIGS:
        raise ValueError(f"{n} labelings exceed the enumeration bound {MAX_CONFIGS}")
    best_e, best = np.inf, None
    for start in range(0, n, chunk):
        labs = _enumerate(inst.labels.count, inst.grid.size, start, min(n, start + chunk))
        e = labeling_energy(inst, labs)
        i = int(np.argmin(e))
        # strict improvement keeps the earliest labeling on ties
        if e[i] < best_e:
            best_e, best = float(e[i]), labs[i]
    return BinaryLabeling(inst.grid, best, inst.labels.count), best_e


def convex_relaxation_solve(inst: TinyInstance, iters: int = 5000,
                            anchor: float = 0.005) -> Tuple[LabelField, float, np.ndarray]:
    """Relaxation without the visibility-consistency constraint.

    Returns the relaxed ``x``, its energy in the original cost scale and the
    visibility variables ``y`` of the normalized rays.
    """
    problem = inst.problem()
    field, energy, y = relaxation(problem, iters, anchor)
    return field, energy + problem.omitted, y


def relaxation(problem: Problem, iters: int = 5000, anchor: float = 0.005):
    """Solve the visibility-free relaxation of ``problem`` from the uniform point.

    ``anchor`` adds a weak quadratic pull toward the start, which picks the
    optimum closest to it among ties.  Weights much above 0.005 shift the
    optimum itself on small instances.
    """
    grid, L1 = problem.grid, problem.num_labels
    x = uniform_init(grid, LabelSpace(L1)).values
    y = build_visibility(x, problem.rays)
    _, _, z = make_feasible(problem, x, np.zeros((grid.size, 3, L1, L1)))
    pd = PrimalDual(problem, x, y, z, visibility=False, anchor=anchor)
    pd.iterate(iters)
    return LabelField(grid, pd.x), pd.surrogate_energy(), pd.y


def simplex_grid_search(v, steps=(0.05, 0.005, 0.0005)) -> np.ndarray:
    """Closest simplex point to ``v`` by exhaustive search on shrinking lattices.

    The first lattice covers the whole simplex; each later one covers a
    few cells of the previous best point at the finer spacing.  The
    objective is strictly convex, so the final point is within about one
    step of the exact projection.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    n = v.size
    if n == 0:
        raise ValueError("empty vector")
    if n == 1:
        return np.ones(1)
    best = None
    for h in steps:
        if best is None:
            axes = [np.arange(0.0, 1.0 + h / 2, h)] * (n - 1)
        else:
            axes = [np.clip(b + h * np.arange(-12, 13), 0.0, 1.0) for b in best[:-1]]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
        last = 1.0 - pts.sum(axis=1)
        ok = last >= -1e-12
        cand = np.column_stack([pts[ok], np.maximum(last[ok], 0.0)])
        best = cand[np.argmin(((cand - v) ** 2).sum(axis=1))]
    return best


def visibility_grid_search(x, ray: Ray, steps: int = 64) -> float:
    """Smallest ray energy over feasible visibility assignments on a lattice.

    Every entry of ``y`` is restricted to multiples of ``1 / steps``.  The
    occupied entries at position ``i`` only interact with the rest of the
    ray through ``y[i-1, free]``, so a backward pass over that value
    enumerates the whole feasible lattice exactly.
    """
    xv = x.values if isinstance(x, LabelField) else np.asarray(x, dtype=float)
    n, L1 = ray.costs.shape
    if n == 0:
        return 0.0
    levels = np.arange(steps + 1) / steps
    occ = np.stack(np.meshgrid(*[levels] * (L1 - 1), indexing="ij"), -1).reshape(-1, L1 - 1)
    eps = 1e-12
    # value[k]: best energy of the remaining positions when the previous free visibility is levels[k]
    value = ray.free_cost * levels
    for i in range(n - 1, -1, -1):
        xs = xv[ray.voxels[i]]
        occ_cost = occ @ ray.costs[i, 1:]
        free_cost = ray.costs[i, 0] * levels + value
        within_x = np.all(occ <= xs[1:] + eps, axis=1)
        new = np.empty_like(value)
        for k, prev in enumerate(levels):
            ok = within_x & np.all(occ <= prev + eps, axis=1)
            ok &= occ.sum(axis=1) <= max(0.0, prev - xs[0]) + eps
            free_ok = levels <= min(prev, xs[0]) + eps
            new[k] = occ_cost[ok].min() + free_cost[free_ok].min()
        value = new
    return float(value[-1])


def slice_image(x: LabelField, axis: int, index: int) -> np.ndarray:
    """8-bit image of the free-space channel of one slice, ``round(255 * x_f)``."""
    if axis not in (0, 1, 2):
        raise ValueError("axis must be 0, 1 or 2")
    if not 0 <= index < x.grid.dims[axis]:
        raise IndexError(f"slice {index} outside [0, {x.grid.dims[axis]})")
    free = np.take(x.volume(0), index, axis=axis)
    return np.floor(255.0 * np.clip(free, 0, 1) + 0.5).astype(np.uint8)


def slice_export(x: LabelField, axis: int, index: int, path: Union[str, Path, None] = None) -> np.ndarray:
    img = slice_image(x, axis, index)
    if path is not None:
        from .io import write_pgm
        write_pgm(path, img)
    return img
