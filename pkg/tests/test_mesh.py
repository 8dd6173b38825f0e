import numpy as np

from rayfusion.grid import BinaryLabeling, VoxelGrid
from rayfusion.mesh import boundary_faces, boundary_mesh, count_boundary_faces, label_color


def test_single_voxel_is_a_cube():
    g = VoxelGrid((3, 3, 3), origin=(1.0, 0.0, 0.0), voxel_size=2.0)
    labels = np.zeros(27, int)
    labels[13] = 1
    v, f, c = boundary_mesh(BinaryLabeling(g, labels))
    assert f.shape == (12, 3) and v.shape == (8, 3)
    assert np.allclose(v.min(axis=0), [3.0, 2.0, 2.0]) and np.allclose(v.max(axis=0), [5.0, 4.0, 4.0])
    assert np.all(c == label_color(1))


def test_normals_point_into_free_space():
    g = VoxelGrid((3, 3, 3))
    labels = np.zeros(27, int)
    labels[13] = 1
    v, f, _ = boundary_mesh(BinaryLabeling(g, labels))
    center = v.mean(axis=0)
    tri = v[f]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    assert np.all(np.einsum("ij,ij->i", n, tri.mean(axis=1) - center) > 0)


def test_triangle_count_matches_face_scan(rng):
    g = VoxelGrid((5, 4, 6))
    for _ in range(10):
        lab = BinaryLabeling(g, (rng.random(g.size) < 0.4).astype(int) * rng.integers(1, 3, g.size), 3)
        _, f, _ = boundary_mesh(lab)
        assert f.shape[0] == 2 * count_boundary_faces(lab)


def test_empty_volume_has_no_faces():
    lab = BinaryLabeling(VoxelGrid((2, 2, 2)), np.zeros(8, int))
    v, f, c = boundary_mesh(lab)
    assert v.shape == (0, 3) and f.shape == (0, 3)
    assert boundary_faces(lab)[0].size == 0
