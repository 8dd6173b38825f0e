"""Randomized property suites shared by the ``validate`` command and the tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .grid import BinaryLabeling, LabelField, LabelSpace, VoxelGrid
from .oracle import TinyInstance, brute_force_minimize, labeling_energy
from .rays import Ray, RayBundle, binary_ray_potential, brute_force_traverse, normalize, traverse
from .raypot import branch_at, build_visibility, check_consistency, majorizer_bound
from .regularizer import SmoothnessModel, feasible_z_arrays, marginalization_residual
from .solver import Problem, SolverConfig, project_simplex, reconstruct


# -- instance generators ---------------------------------------------------

def random_ray(rng: np.random.Generator, max_len: int = 7, max_labels: int = 4,
               num_labels: int = None, scale: float = 3.0) -> Ray:
    n = int(rng.integers(1, max_len + 1))
    L1 = num_labels or int(rng.integers(2, max_labels + 1))
    costs = rng.normal(scale=scale, size=(n, L1))
    costs[:, 0] = 0.0
    return Ray(np.arange(n), costs, float(rng.normal(scale=scale)))


def random_grid_rays(rng: np.random.Generator, grid: VoxelGrid, num_rays: int,
                     num_labels: int, scale: float = 2.0) -> List[Ray]:
    """Rays cast from outside the grid through random interior points."""
    rays = []
    center = (grid.lower + grid.upper) / 2
    radius = np.linalg.norm(grid.upper - grid.lower)
    tries = 0
    while len(rays) < num_rays and tries < 50 * num_rays:
        tries += 1
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        origin = center - radius * d
        target = grid.lower + rng.random(3) * (grid.upper - grid.lower)
        vox, _, off, _ = traverse(origin[None], (target - origin)[None], grid)
        if vox.size == 0:
            continue
        n = vox.size
        costs = rng.normal(scale=scale, size=(n, num_labels))
        costs[:, 0] = 0.0
        rays.append(Ray(vox, costs, float(rng.normal(scale=scale))))
    return rays


def random_model(rng: np.random.Generator, num_labels: int) -> SmoothnessModel:
    if rng.random() < 0.2:
        return SmoothnessModel(num_labels)
    if rng.random() < 0.6:
        w = rng.random((num_labels, num_labels))
        return SmoothnessModel.isotropic(num_labels, (w + w.T) / 2)
    metrics = {}
    for l in range(num_labels):
        for m in range(l + 1, num_labels):
            B = rng.normal(size=(3, 3))
            metrics[(l, m)] = B @ B.T / 3 + 0.1 * np.eye(3)
    return SmoothnessModel.anisotropic(num_labels, metrics)


def random_tiny_instance(rng: np.random.Generator, max_voxels: int = 8,
                         max_labels: int = 3, max_rays: int = 6) -> TinyInstance:
    L1 = int(rng.integers(2, max_labels + 1))
    while True:
        dims = tuple(int(d) for d in rng.integers(1, 4, size=3))
        size = dims[0] * dims[1] * dims[2]
        if size <= max_voxels and L1 ** size <= 50_000:
            break
    grid = VoxelGrid(dims)
    rays = random_grid_rays(rng, grid, int(rng.integers(1, max_rays + 1)), L1)
    return TinyInstance(grid, rays, random_model(rng, L1), LabelSpace(L1))


def random_label_field(rng: np.random.Generator, grid: VoxelGrid, L1: int) -> np.ndarray:
    x = rng.random((grid.size, L1)) ** 3
    x /= x.sum(axis=1, keepdims=True)
    return x


def first_hit_labelings(n: int, L1: int):
    """One labeling per distinct ray outcome: all free, or label ``l`` first at ``k``."""
    yield np.zeros(n, dtype=np.int64)
    for k in range(n):
        for lab in range(1, L1):
            labels = np.zeros(n, dtype=np.int64)
            labels[k] = lab
            yield labels


# -- suites ----------------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: int = 0
    messages: List[str] = field(default_factory=list)

    def check(self, ok: bool, message: str):
        if ok:
            self.passed += 1
        else:
            self.failed += 1
            if len(self.messages) < 5:
                self.messages.append(message)


def suite_traversal(rng, trials, result):
    grid = VoxelGrid((5, 4, 6), origin=(-1.0, 0.5, 2.0), voxel_size=0.7)
    for t in range(trials):
        o = grid.lower + rng.uniform(-3, 7, size=3)
        d = rng.normal(size=3)
        got, _, _, _ = traverse(o[None], d[None], grid)
        ref = brute_force_traverse(o, d, grid)
        result.check(np.array_equal(got, ref), f"trial {t}: traversal differs")


def suite_normalization(rng, trials, result):
    for t in range(trials):
        ray = random_ray(rng)
        norm, const = normalize(ray)
        n, L1 = ray.costs.shape
        ok = bool(np.all(norm.costs <= 0) and norm.free_cost == 0)
        for labels in first_hit_labelings(n, L1):
            err = binary_ray_potential(norm, labels) + const - binary_ray_potential(ray, labels)
            ok &= abs(err) <= 1e-12
        result.check(ok, f"trial {t}: normalization not exact")


def suite_visibility(rng, trials, result):
    for t in range(trials):
        L1 = int(rng.integers(2, 4))
        grid = VoxelGrid((3, 3, 2))
        rays = RayBundle.from_rays(random_grid_rays(rng, grid, 4, L1), L1)
        if rng.random() < 0.5:
            x = random_label_field(rng, grid, L1)
        else:
            x = np.eye(L1)[rng.integers(0, L1, grid.size)]
        y = build_visibility(x, rays)
        v = check_consistency(x, y, rays)
        result.check(max(v) <= 1e-12, f"trial {t}: visibility residual {max(v):.3g}")


def suite_feasible_z(rng, trials, result):
    for t in range(trials):
        L1 = int(rng.integers(2, 4))
        grid = VoxelGrid(tuple(int(d) for d in rng.integers(1, 4, size=3)))
        x = random_label_field(rng, grid, L1)
        nbr = grid.forward_neighbors()
        # from the zero start the substitution count is bounded by (L1 - 1)^2
        z, counts = feasible_z_arrays(x, nbr)
        ok = (marginalization_residual(x, z, nbr) <= 1e-8 and z.min() >= -1e-12
              and counts.max(initial=0) <= (L1 - 1) ** 2)
        z, _ = feasible_z_arrays(x, nbr, rng.uniform(-1, 1, size=(grid.size, 3, L1, L1)))
        ok &= marginalization_residual(x, z, nbr) <= 1e-8 and z.min() >= -1e-12
        result.check(bool(ok), f"trial {t}: feasible_z failed (max substitutions {counts.max()})")


def suite_majorizer(rng, trials, result):
    for t in range(trials):
        xn, yn = rng.random(2)
        lin = branch_at(xn, yn)
        xs, ys = rng.random(2)
        dom = majorizer_bound(xs, ys, lin) <= max(0.0, ys - xs) + 1e-12
        tight = abs(majorizer_bound(xn, yn, lin) - max(0.0, yn - xn)) <= 1e-12
        result.check(bool(dom and tight), f"trial {t}: majorizer bound violated")


def suite_simplex(rng, trials, result):
    for t in range(trials):
        v = rng.normal(size=int(rng.integers(1, 5)))
        u = project_simplex(v)
        # optimality: u_i = max(v_i - theta, 0) for one theta with sum u = 1
        theta = np.mean((v - u)[u > 0]) if np.any(u > 0) else np.inf
        ok = abs(u.sum() - 1) <= 1e-12 and u.min() >= 0
        ok &= np.allclose(u, np.maximum(v - theta, 0), atol=1e-12)
        result.check(bool(ok), f"trial {t}: simplex projection not optimal")


def suite_monotone(rng, trials, result):
    for t in range(trials):
        L1 = int(rng.integers(2, 4))
        grid = VoxelGrid(tuple(int(d) for d in rng.integers(1, 5, size=3)))
        rays = random_grid_rays(rng, grid, int(rng.integers(1, 21)), L1)
        bundle, const = normalize(RayBundle.from_rays(rays, L1))
        problem = Problem(grid, bundle, random_model(rng, L1), const)
        rec = reconstruct(problem, SolverConfig(inner_iters=5, max_outer=30))
        e = np.asarray(rec.accepted_energies)
        result.check(bool(np.all(np.diff(e) <= 1e-9)), f"trial {t}: accepted energy increased")


def suite_oracle_bound(rng, trials, result):
    for t in range(trials):
        inst = random_tiny_instance(rng)
        _, best = brute_force_minimize(inst)
        problem = inst.problem()
        rec = reconstruct(problem, SolverConfig(inner_iters=10, max_outer=40))
        e = rec.report.original
        direct = float(labeling_energy(inst, rec.labeling.labels[None])[0])
        ok = e >= best - 1e-9 and abs(e - direct) <= 1e-9 * max(1.0, abs(direct))
        result.check(ok, f"trial {t}: MM energy {e:.6g} vs optimum {best:.6g}")


SUITES: Dict[str, Callable] = {
    "traversal": suite_traversal,
    "normalization": suite_normalization,
    "visibility": suite_visibility,
    "feasible_z": suite_feasible_z,
    "majorizer": suite_majorizer,
    "simplex": suite_simplex,
    "monotone": suite_monotone,
    "oracle_bound": suite_oracle_bound,
}


def run_suites(seed: int, trials: int, names=None) -> List[SuiteResult]:
    results = []
    if trials <= 0:
        return results
    for i, name in enumerate(names or SUITES):
        rng = np.random.default_rng([seed, i])
        res = SuiteResult(name)
        SUITES[name](rng, trials, res)
        results.append(res)
    return results
