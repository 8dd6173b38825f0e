import numpy as np
import pytest
from hypothesis import given, strategies as st

from rayfusion.grid import VoxelGrid
from rayfusion.rays import (Ray, RayBundle, add_semantic_costs, binary_ray_potential,
                            brute_force_traverse, build_depth_costs, normalize,
                            shift_free_cost, transform_nonpositive, traverse,
                            trim_uninformative)
from rayfusion.validate import first_hit_labelings, random_ray


def test_depth_costs_window():
    c = build_depth_costs(20, 10, 0.5, 3.0)
    assert c[10] == -3.0
    assert c[8] == -2.0 and c[12] == -2.0
    assert np.all(c[:4] == 0) and np.all(c[17:] == 0)
    assert np.count_nonzero(c) == 11


def test_depth_costs_reject_bad_input():
    with pytest.raises(ValueError):
        build_depth_costs(5, 5, 0.5, 3.0)
    with pytest.raises(ValueError):
        build_depth_costs(5, 1, -1.0, 3.0)


def test_semantic_costs_skip_free_column():
    c = add_semantic_costs(np.zeros((2, 3)), [1.0, -2.0], weight=2.0)
    assert np.array_equal(c, [[0, 2, -4], [0, 2, -4]])
    with pytest.raises(ValueError):
        add_semantic_costs(np.zeros((2, 3)), [1.0])


def test_bundle_layout():
    rays = [Ray([0, 1], np.zeros((2, 2))), Ray([2], np.zeros((1, 2))), Ray([3, 4, 5], np.zeros((3, 2)))]
    b = RayBundle.from_rays(rays)
    assert b.lengths.tolist() == [2, 1, 3]
    assert b.ray_id.tolist() == [0, 0, 1, 2, 2, 2]
    assert b.local.tolist() == [0, 1, 0, 0, 1, 2]
    assert b.has_next.tolist() == [True, False, False, True, True, False]
    assert [g.tolist() for g in b.depth_groups] == [[0, 2, 3], [1, 4], [5]]
    assert np.array_equal(b[2].voxels, [3, 4, 5])


def test_empty_bundle():
    b = RayBundle.from_rays([], 3)
    assert len(b) == 0 and b.num_positions == 0 and b.num_labels == 3
    out, const = normalize(b)
    assert const.size == 0


@given(st.integers(0, 2 ** 31 - 1))
def test_normalization_is_exact_per_configuration(seed):
    rng = np.random.default_rng(seed)
    ray = random_ray(rng, max_len=6, max_labels=3)
    norm, const = normalize(ray)
    assert np.all(norm.costs <= 0) and norm.free_cost == 0
    n, L1 = ray.costs.shape
    for labels in first_hit_labelings(n, L1):
        assert abs(binary_ray_potential(norm, labels) + const - binary_ray_potential(ray, labels)) <= 1e-12


def test_transform_requires_shift_first():
    with pytest.raises(ValueError):
        transform_nonpositive(Ray([0], [[0.0, 1.0]], 2.0))


def test_shift_then_transform_on_known_ray():
    ray = Ray([0, 1], [[0.0, 2.0], [0.0, -1.0]], 1.0)
    shifted, c1 = shift_free_cost(ray)
    assert c1 == 1.0 and np.array_equal(shifted.costs, [[0, 1], [0, -2]])
    out, c2 = transform_nonpositive(shifted)
    # position 1 max is 0, position 0 max is 1 -> constant 1
    assert c2 == 1.0 and np.array_equal(out.costs, [[-1, 0], [0, -2]])


def test_trim_keeps_potential():
    rng = np.random.default_rng(3)
    for _ in range(50):
        ray = random_ray(rng, max_len=6, max_labels=3)
        ray.costs[rng.random(len(ray)) < 0.5, 1:] = ray.free_cost
        t = trim_uninformative(ray)
        n, L1 = ray.costs.shape
        for labels in first_hit_labelings(n, L1):
            a = binary_ray_potential(ray, labels)
            b = binary_ray_potential(t, labels[:len(t)])
            assert abs(a - b) <= 1e-12


@given(st.integers(0, 2 ** 31 - 1))
def test_traversal_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = VoxelGrid((4, 5, 3), origin=(0.5, -1.0, 2.0), voxel_size=0.8)
    o = g.lower + rng.uniform(-3, 7, size=3)
    d = rng.normal(size=3)
    got, _, _, _ = traverse(o[None], d[None], g)
    assert np.array_equal(got, brute_force_traverse(o, d, g))


def test_traversal_axis_aligned_and_miss():
    g = VoxelGrid((3, 1, 1))
    vox, t, off, t_exit = traverse([[-1.0, 0.5, 0.5], [-1.0, 5.0, 0.5]], [[1.0, 0, 0], [1.0, 0, 0]], g)
    assert vox.tolist() == [0, 1, 2] and off.tolist() == [0, 3, 3]
    assert np.allclose(t, [1, 2, 3]) and t_exit[0] == 4.0
    vox, *_ = traverse([[3.5, 0.5, 0.5]], [[-1.0, 0, 0]], g)
    assert vox.tolist() == [2, 1, 0]


def test_traversal_consecutive_voxels_are_face_adjacent(rng):
    g = VoxelGrid((6, 6, 6))
    o = rng.uniform(-5, 11, size=(200, 3))
    d = rng.normal(size=(200, 3))
    vox, _, off, _ = traverse(o, d, g)
    ijk = g.delinearize(vox)
    for r in range(200):
        seg = ijk[off[r]:off[r + 1]]
        if len(seg) > 1:
            assert np.all(np.abs(np.diff(seg, axis=0)).sum(axis=1) == 1)
