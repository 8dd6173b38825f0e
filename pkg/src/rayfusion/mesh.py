"""Boundary surfaces of a label volume as triangle meshes."""

from __future__ import annotations

import numpy as np

from .grid import BinaryLabeling

PALETTE = np.array([
    [255, 255, 255], [200, 60, 60], [60, 160, 60], [60, 90, 200],
    [220, 180, 40], [150, 80, 180], [40, 180, 180], [120, 120, 120],
], dtype=np.uint8)


def label_color(labels) -> np.ndarray:
    return PALETTE[np.asarray(labels) % len(PALETTE)]


def boundary_faces(labeling: BinaryLabeling):
    """Faces between free space and occupied voxels.

    Returns ``(axis, lower_corner, label, outward)`` arrays, one entry per
    face: the face is perpendicular to ``axis`` with its lowest lattice
    corner at ``lower_corner``; ``label`` is the occupied side's label and
    ``outward`` is +1 when the normal points along ``+axis``.  Space outside
    the grid counts as free.
    """
    vol = np.pad(labeling.volume(), 1, constant_values=0)
    axes, corners, labels, signs = [], [], [], []
    for k in range(3):
        lo = np.take(vol, np.arange(vol.shape[k] - 1), axis=k)
        hi = np.take(vol, np.arange(1, vol.shape[k]), axis=k)
        for occ_side, sign in ((lo, 1), (hi, -1)):
            other = hi if sign == 1 else lo
            idx = np.argwhere((occ_side != 0) & (other == 0))
            if idx.size == 0:
                continue
            lab = occ_side[tuple(idx.T)]
            corner = idx.copy()
            corner[:, k] += 1          # face plane between lo and hi in padded coords
            corner -= 1                # undo the padding
            axes.append(np.full(len(idx), k))
            corners.append(corner)
            labels.append(lab)
            signs.append(np.full(len(idx), sign))
    if not axes:
        z = np.zeros(0, np.int64)
        return z, np.zeros((0, 3), np.int64), z, z
    return (np.concatenate(axes), np.concatenate(corners),
            np.concatenate(labels).astype(np.int64), np.concatenate(signs))


def boundary_mesh(labeling: BinaryLabeling):
    """Triangle mesh ``(vertices, faces, colors)`` in world coordinates.

    Each boundary face becomes two triangles wound so the normal points
    into free space.  Vertices are shared between faces of the same label.
    """
    axis, corner, label, sign = boundary_faces(labeling)
    grid = labeling.grid
    if axis.size == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros((0, 3), np.uint8)
    n = axis.size
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    quad = np.repeat(corner[:, None, :], 4, axis=1)
    rows = np.arange(n)
    for j, (du, dv) in enumerate(((0, 0), (1, 0), (1, 1), (0, 1))):
        quad[rows, j, u] += du
        quad[rows, j, v] += dv
    # corners run counter-clockwise seen from +axis; flip for inward faces
    quad[sign < 0] = quad[sign < 0][:, ::-1]
    keys = np.concatenate([quad.reshape(-1, 3), np.repeat(label, 4)[:, None]], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(n, 4)
    faces = np.concatenate([inverse[:, [0, 1, 2]], inverse[:, [0, 2, 3]]], axis=0)
    vertices = grid.lower + uniq[:, :3] * grid.voxel_size
    return vertices, faces, label_color(uniq[:, 3])


def count_boundary_faces(labeling: BinaryLabeling) -> int:
    """Free/occupied face count by scanning every voxel's six neighbors."""
    vol = labeling.volume()
    dims = vol.shape
    total = 0
    for idx in np.argwhere(vol != 0):
        for k in range(3):
            for step in (-1, 1):
                nb = idx.copy()
                nb[k] += step
                if nb[k] < 0 or nb[k] >= dims[k] or vol[tuple(nb)] == 0:
                    total += 1
    return total
