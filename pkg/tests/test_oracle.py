import numpy as np
import pytest
from hypothesis import given, strategies as st

from rayfusion.grid import BinaryLabeling, LabelField, LabelSpace, VoxelGrid
from rayfusion.oracle import (TinyInstance, brute_force_minimize, convex_relaxation_solve,
                              labeling_energy, ray_terms, simplex_grid_search, slice_export,
                              slice_image, visibility_grid_search)
from rayfusion.io import read_pgm
from rayfusion.rays import Ray, binary_ray_potential, normalize
from rayfusion.raypot import build_visibility, ray_energy
from rayfusion.regularizer import SmoothnessModel
from rayfusion.solver import project_simplex
from rayfusion.validate import random_grid_rays, random_model, random_tiny_instance


def _three_voxel():
    return TinyInstance(VoxelGrid((3, 1, 1)),
                        [Ray(np.arange(3), [[0.0, -2.0], [0.0, -3.0], [0.0, -2.0]])],
                        SmoothnessModel(2), LabelSpace(2))


def test_enumeration_bound_enforced():
    with pytest.raises(ValueError):
        TinyInstance(VoxelGrid((13, 1, 1)), [], SmoothnessModel(2), LabelSpace(2))
    with pytest.raises(ValueError):
        TinyInstance(VoxelGrid((2, 1, 1)), [], SmoothnessModel(4), LabelSpace(4))


def test_brute_force_on_single_ray():
    lab, e = brute_force_minimize(_three_voxel())
    assert e == -3.0
    # lexicographically smallest minimizer: free, occupied, free
    assert lab.labels.tolist() == [0, 1, 0]


def test_brute_force_with_smoothness_prefers_block():
    g = VoxelGrid((4, 1, 1))
    rays = [Ray([0, 1, 2, 3], [[0, -1.0], [0, -1.0], [0, -1.0], [0, -1.0]])]
    inst = TinyInstance(g, rays, SmoothnessModel.isotropic(2, 5.0), LabelSpace(2))
    lab, e = brute_force_minimize(inst)
    # any transition costs 5; a uniform volume has none
    assert e == -1.0 and lab.labels.tolist() == [1, 1, 1, 1]


def test_ray_terms_match_per_ray_potential(rng):
    for _ in range(20):
        inst = random_tiny_instance(rng)
        labs = rng.integers(0, inst.labels.count, (5, inst.grid.size))
        direct = [sum(binary_ray_potential(r, l[r.voxels]) for r in inst.rays) for l in labs]
        assert np.allclose(ray_terms(inst.rays, labs), direct)


def test_relaxation_on_three_voxels_is_half_integral():
    field, energy, y = convex_relaxation_solve(_three_voxel())
    assert energy == pytest.approx(-3.5, abs=1e-3)
    assert np.allclose(field.values, 0.5, atol=1e-3)
    assert np.allclose(y[:, 1], [0.5, 0.5, 0.5], atol=1e-3)
    assert np.allclose(y[:, 0], [0.5, 0.5, 0.5], atol=1e-3)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=4))
def test_grid_search_agrees_with_projection(v):
    assert np.abs(simplex_grid_search(v) - project_simplex(np.array(v))).max() <= 2e-3


def test_slice_image_rounding(tmp_path):
    g = VoxelGrid((2, 2, 1))
    x = LabelField(g, [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0], [0.002, 0.998]])
    img = slice_image(x, 2, 0)
    assert img.dtype == np.uint8 and img.tolist() == [[255, 128], [0, 1]]
    slice_export(x, 2, 0, tmp_path / "s.pgm")
    assert np.array_equal(read_pgm(tmp_path / "s.pgm"), img)
    with pytest.raises(IndexError):
        slice_image(x, 0, 2)
    with pytest.raises(ValueError):
        slice_image(x, 3, 0)


@pytest.mark.parametrize("seed", range(40))
def test_visibility_greedy_matches_lattice_search(seed):
    rng = np.random.default_rng(seed)
    n, L1 = int(rng.integers(1, 5)), int(rng.integers(2, 4))
    costs = rng.normal(scale=2.0, size=(n, L1))
    costs[:, 0] = 0.0
    ray, _ = normalize(Ray(np.arange(n), costs, float(rng.normal(scale=2.0))))
    # lattice-valued x keeps the greedy optimum on the lattice; sums need not be one
    x = rng.integers(0, 65, size=(n, L1)) / 64
    y = build_visibility(x, ray)
    assert ray_energy(y, ray) == pytest.approx(visibility_grid_search(x, ray), abs=1e-12)


def _single_ray(costs):
    n = len(costs)
    table = np.column_stack([np.zeros(n), costs])
    return TinyInstance(VoxelGrid((n, 1, 1)), [Ray(np.arange(n), table)],
                        SmoothnessModel(2), LabelSpace(2))


@pytest.mark.parametrize("seed", range(8))
def test_relaxation_is_weak_when_best_cost_exceeds_the_rest(seed):
    rng = np.random.default_rng(seed)
    while True:
        others = -rng.uniform(0.5, 3.0, size=int(rng.integers(2, 4)))
        if others.sum() < others.min():
            break
    best = rng.uniform(others.sum(), others.min())
    costs = np.insert(others, int(rng.integers(0, others.size + 1)), best)
    inst = _single_ray(costs)
    _, relaxed, _ = convex_relaxation_solve(inst)
    _, exact = brute_force_minimize(inst)
    assert exact == pytest.approx(best)
    assert relaxed < exact - 1e-2


def test_relaxation_is_tight_with_one_informative_position():
    inst = _single_ray([0.0, -3.0, 0.0])
    _, relaxed, _ = convex_relaxation_solve(inst)
    _, exact = brute_force_minimize(inst)
    assert exact == -3.0 and relaxed == pytest.approx(exact, abs=1e-3)


def test_relaxation_lower_bounds_brute_force(rng):
    for _ in range(15):
        inst = random_tiny_instance(rng, max_voxels=6)
        _, relaxed, _ = convex_relaxation_solve(inst)
        _, exact = brute_force_minimize(inst)
        assert relaxed <= exact + 1e-3 * max(1.0, abs(exact))


def test_brute_force_beats_random_assignments(rng):
    g = VoxelGrid((2, 2, 1))
    inst = TinyInstance(g, random_grid_rays(rng, g, 5, 3), random_model(rng, 3), LabelSpace(3))
    _, best = brute_force_minimize(inst)
    samples = rng.integers(0, 3, size=(100, g.size))
    assert best <= labeling_energy(inst, samples).min()


def test_slice_of_binary_sphere_is_a_disk():
    g = VoxelGrid((16, 16, 16))
    c = g.centers() - 8.0
    inside = np.linalg.norm(c, axis=1) < 5.0
    field = BinaryLabeling(g, inside.astype(int)).one_hot()
    img = slice_image(field, 2, 8)
    xy = np.linalg.norm(c.reshape(16, 16, 16, 3)[:, :, 8, :2], axis=-1)
    disk = xy < np.sqrt(25.0 - 0.5 ** 2)
    assert np.array_equal(img == 0, disk) and np.all(img[~disk] == 255)
