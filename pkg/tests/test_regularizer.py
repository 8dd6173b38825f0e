import numpy as np
import pytest
from hypothesis import given, strategies as st

from rayfusion.grid import BinaryLabeling, LabelField, VoxelGrid
from rayfusion.mesh import count_boundary_faces
from rayfusion.regularizer import (SmoothnessModel, binary_smoothness, binary_transitions,
                                   boundary_area, feasible_z, feasible_z_arrays,
                                   marginalization_residual, project_affine,
                                   repair_nonnegative, smoothness_energy)
from rayfusion.validate import random_label_field, random_model


def test_unit_transition_costs_weight():
    m = SmoothnessModel.isotropic(2, 0.7)
    z = np.zeros((1, 3, 2, 2))
    z[0, 0, 0, 1] = 1.0
    assert smoothness_energy(z, m) == pytest.approx(0.7)
    assert smoothness_energy(z, SmoothnessModel.isotropic(2, 0.7, order=2)) == pytest.approx(0.7)


def test_norm_orders_differ_on_diagonal_transitions():
    z = np.zeros((1, 3, 2, 2))
    z[0, :, 0, 1] = 1.0
    assert smoothness_energy(z, SmoothnessModel.isotropic(2, 1.0)) == pytest.approx(3.0)
    assert smoothness_energy(z, SmoothnessModel.isotropic(2, 1.0, order=2)) == pytest.approx(np.sqrt(3))


def test_model_validation():
    with pytest.raises(ValueError):
        SmoothnessModel.isotropic(2, -1.0)
    with pytest.raises(ValueError):
        SmoothnessModel.isotropic(3, np.ones((2, 2)))
    with pytest.raises(ValueError):
        SmoothnessModel.anisotropic(2, {(0, 1): -np.eye(3)})
    with pytest.raises(ValueError):
        SmoothnessModel(2, orders=3)


def test_anisotropic_metric():
    A = np.diag([1.0, 2.0, 3.0])
    m = SmoothnessModel.anisotropic(3, {(1, 0): A}, default=0.5)
    assert m.phi((0, 1), [0.0, 1.0, 0.0]) == pytest.approx(2.0)
    assert m.phi((1, 2), [3.0, 4.0, 0.0]) == pytest.approx(3.5)
    assert m.phi((1, 1), [1.0, 0.0, 0.0]) == 0.0
    assert np.allclose(m.face_weights()[:, 0, 1], [1, 2, 3])


@given(st.integers(0, 2 ** 31 - 1))
def test_energy_depends_on_difference_only(seed):
    rng = np.random.default_rng(seed)
    L1 = int(rng.integers(2, 4))
    m = random_model(rng, L1)
    z = rng.random((4, 3, L1, L1))
    shift = rng.random((4, 3, 1))
    z2 = z.copy()
    for l, mm in m.pairs:
        z2[:, :, l, mm] += shift[..., 0]
        z2[:, :, mm, l] += shift[..., 0]
    assert smoothness_energy(z2, m) == pytest.approx(smoothness_energy(z, m), rel=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_feasible_z_satisfies_constraints(seed):
    rng = np.random.default_rng(seed)
    L1 = int(rng.integers(2, 5))
    g = VoxelGrid(tuple(int(d) for d in rng.integers(1, 4, size=3)))
    x = random_label_field(rng, g, L1)
    z, counts = feasible_z(LabelField(g, x), rng.uniform(-1, 1, size=(g.size, 3, L1, L1)),
                           return_counts=True)
    assert marginalization_residual(LabelField(g, x), z) <= 1e-8
    assert z.min() >= -1e-12


@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 5), st.sampled_from([1.0, 3.0, 20.0]))
def test_substitutions_from_zero_start_are_bounded(seed, L1, power):
    rng = np.random.default_rng(seed)
    g = VoxelGrid((3, 3, 3))
    x = rng.random((g.size, L1)) ** power
    x /= x.sum(axis=1, keepdims=True)
    z, counts = feasible_z(LabelField(g, x), return_counts=True)
    assert marginalization_residual(LabelField(g, x), z) <= 1e-8
    assert z.min() >= -1e-12
    assert counts.max() <= (L1 - 1) ** 2


def test_compiled_feasible_z_matches_reference(rng):
    g = VoxelGrid((3, 2, 2))
    for L1 in (2, 3, 4):
        x = random_label_field(rng, g, L1)
        z0 = rng.normal(size=(g.size, 3, L1, L1))
        nbr = g.forward_neighbors()
        ref = project_affine(x, nbr, z0).reshape(-1, L1, L1)
        ref_counts = repair_nonnegative(ref)
        z, counts = feasible_z_arrays(x, nbr, z0)
        assert np.allclose(z.reshape(-1, L1, L1), ref, atol=1e-12)
        assert np.array_equal(counts.reshape(-1), ref_counts)


def test_affine_projection_is_orthogonal(rng):
    g = VoxelGrid((2, 2, 1))
    x = random_label_field(rng, g, 3)
    nbr = g.forward_neighbors()
    z0 = rng.normal(size=(g.size, 3, 3, 3))
    p = project_affine(x, nbr, z0)
    assert marginalization_residual(x, p, nbr) <= 1e-12
    # any other feasible point w: <z0 - p, w - p> = 0
    w = project_affine(x, nbr, rng.normal(size=z0.shape))
    assert abs(np.sum((z0 - p) * (w - p))) <= 1e-9


def test_feasible_z_rejects_unequal_totals():
    g = VoxelGrid((2, 1, 1))
    with pytest.raises(ValueError):
        feasible_z(LabelField(g, [[1.0, 0.0], [0.5, 0.0]]))


def test_binary_energy_is_boundary_area():
    g = VoxelGrid((4, 4, 4))
    rng = np.random.default_rng(5)
    for L1 in (2, 3):
        m = SmoothnessModel.isotropic(L1, 0.3)
        for _ in range(5):
            lab = BinaryLabeling(g, rng.integers(0, L1, g.size), L1)
            z = feasible_z(lab.one_hot())
            assert np.allclose(z, binary_transitions(lab))
            e = smoothness_energy(z, m)
            assert e == pytest.approx(boundary_area(lab, m), rel=1e-12)
            assert e == pytest.approx(binary_smoothness(lab.labels, g, m)[0], rel=1e-12)


def test_cube_energy_counts_faces():
    g = VoxelGrid((8, 8, 8))
    vol = np.zeros((8, 8, 8), int)
    vol[2:6, 2:6, 2:6] = 1
    lab = BinaryLabeling(g, vol.ravel())
    z = feasible_z(lab.one_hot())
    assert count_boundary_faces(lab) == 96
    assert smoothness_energy(z, SmoothnessModel.isotropic(2, 0.25)) == pytest.approx(24.0, rel=1e-12)
