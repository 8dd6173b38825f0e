"""Label space, voxel grid geometry and the relaxed label field."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FREE = 0


@dataclass(frozen=True)
class LabelSpace:
    """Labels ``0..count-1``; label 0 is always free space."""

    count: int
    names: Optional[Sequence[str]] = None

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"need at least 2 labels, got {self.count}")
        if self.names is not None and len(self.names) != self.count:
            raise ValueError("one name per label required")

    @property
    def free_space_id(self) -> int:
        return FREE

    @property
    def occupied(self) -> range:
        return range(1, self.count)


@dataclass(frozen=True)
class VoxelGrid:
    """Regular grid of isotropic cubic voxels.

    Voxel ``(sx, sy, sz)`` covers ``origin + voxel_size * [s, s + 1)``.
    Linear indices follow C order, so ``values.reshape(dims)`` is indexed
    as ``[sx, sy, sz]``.
    """

    dims: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    voxel_size: float = 1.0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.voxel_size * np.asarray(self.dims, dtype=float)

    def linearize(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), self.dims)

    def delinearize(self, s) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(s), self.dims), axis=-1)

    def contains(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        return np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=-1)

    def centers(self) -> np.ndarray:
        """World coordinates of all voxel centers, shape ``(size, 3)``."""
        ijk = self.delinearize(np.arange(self.size))
        return self.lower + (ijk + 0.5) * self.voxel_size

    def forward_neighbors(self) -> np.ndarray:
        """Index of ``s + e_k`` for each voxel and axis, shape ``(size, 3)``.

        At the upper face of the volume the voxel itself is returned
        (replicate padding), so transitions never cross the boundary.
        """
        ijk = self.delinearize(np.arange(self.size))
        out = np.empty((self.size, 3), dtype=np.int64)
        for k in range(3):
            shifted = ijk.copy()
            shifted[:, k] = np.minimum(shifted[:, k] + 1, self.dims[k] - 1)
            out[:, k] = self.linearize(shifted)
        return out


@dataclass
class LabelField:
    """Relaxed indicators ``x[s, l]`` in ``[0, 1]``, one row per voxel."""

    grid: VoxelGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.size:
            raise ValueError(
                f"values must have shape ({self.grid.size}, L+1), got {self.values.shape}"
            )

    @property
    def num_labels(self) -> int:
        return self.values.shape[1]

    def simplex_residual(self) -> float:
        v = self.values
        return float(max(np.abs(v.sum(axis=1) - 1.0).max(initial=0.0),
                         (-v).max(initial=0.0), (v - 1.0).max(initial=0.0)))

    def volume(self, label: int = FREE) -> np.ndarray:
        return self.values[:, label].reshape(self.grid.dims)


@dataclass
class BinaryLabeling:
    grid: VoxelGrid
    labels: np.ndarray
    num_labels: int = field(default=2)

    def __post_init__(self):
        self.labels = np.asarray(self.labels).reshape(-1)
        if self.labels.shape[0] != self.grid.size:
            raise ValueError("one label per voxel required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_labels):
            raise ValueError("label index out of range")

    def one_hot(self) -> LabelField:
        x = np.zeros((self.grid.size, self.num_labels))
        x[np.arange(self.grid.size), self.labels] = 1.0
        return LabelField(self.grid, x)

    def volume(self) -> np.ndarray:
        return self.labels.reshape(self.grid.dims)


def argmax_round(x: LabelField) -> BinaryLabeling:
    """Per-voxel label with the largest value; ties go to the smaller label."""
    if not np.all(np.isfinite(x.values)):
        raise ValueError("label field contains non-finite values")
    # np.argmax returns the first maximal index, which is the tie rule we want.
    labels = np.argmax(x.values, axis=1).astype(np.int64)
    return BinaryLabeling(x.grid, labels, x.num_labels)


def uniform_init(grid: VoxelGrid, labels: LabelSpace) -> LabelField:
    return LabelField(grid, np.full((grid.size, labels.count), 1.0 / labels.count))
