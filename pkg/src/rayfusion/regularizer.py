"""Anisotropic multi-label smoothness over label transition gradients.

Transition gradients are stored densely as ``z[s, k, l, m]``: the amount of
label ``l`` at voxel ``s`` that becomes label ``m`` at the forward neighbor
``s + e_k``.  The diagonal ``z[s, k, l, l]`` carries the mass that does not
change label and is never charged.  A feasible ``z`` is non-negative and
its ``(s, k)`` slice has row sums ``x[s]`` and column sums ``x[s + e_k]``.
At the upper face of the volume ``s + e_k`` is replaced by ``s`` itself, so
the boundary is never charged.

The energy charges ``phi_lm(z[s, :, l, m] - z[s, :, m, l])`` per voxel and
unordered label pair, with ``phi_lm(v) = ||A_lm v||_r`` and ``r`` either 1
or 2 per pair.  With ``r = 1`` and ``A = w I`` every unit face costs ``w``
wherever it sits, so binary energies are exact boundary areas; with
``r = 2`` the penalty is rotation invariant but a voxel with transitions
along several axes pays less than its face count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, Optional, Tuple

import numpy as np

from . import _kernels
from .grid import BinaryLabeling, LabelField, VoxelGrid


@dataclass
class SmoothnessModel:
    """Convex, positively 1-homogeneous surface penalties per label pair.

    ``matrices[p]`` is the 3x3 metric of pair ``pairs[p] = (l, m)``, l < m,
    and ``orders[p]`` the norm (1 or 2) applied to ``A v``.
    """

    num_labels: int
    matrices: np.ndarray = field(default=None)
    orders: np.ndarray = field(default=None)

    def __post_init__(self):
        npairs = len(self.pairs)
        if self.matrices is None:
            self.matrices = np.zeros((npairs, 3, 3))
        self.matrices = np.asarray(self.matrices, dtype=float).reshape(npairs, 3, 3)
        if self.orders is None:
            self.orders = np.full(npairs, 2)
        self.orders = np.broadcast_to(np.asarray(self.orders, dtype=np.int64), (npairs,)).copy()
        if not np.all(np.isin(self.orders, (1, 2))):
            raise ValueError("norm orders must be 1 or 2")

    @property
    def pairs(self):
        return list(combinations(range(self.num_labels), 2))

    @property
    def pair_index(self) -> Tuple[np.ndarray, np.ndarray]:
        p = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        return p[:, 0], p[:, 1]

    @classmethod
    def isotropic(cls, num_labels: int, weights=1.0, order: int = 1) -> "SmoothnessModel":
        """``w_lm * ||v||_order``; ``weights`` is a scalar or a symmetric matrix.

        The default ``order=1`` charges ``w`` per boundary face of a binary
        labeling; ``order=2`` is the Euclidean (rotation invariant) variant.
        """
        w = np.asarray(weights, dtype=float)
        if w.ndim == 0:
            w = np.full((num_labels, num_labels), float(w))
        if w.shape != (num_labels, num_labels):
            raise ValueError("weights must be a scalar or a (labels x labels) matrix")
        model = cls(num_labels, orders=order)
        for p, (l, m) in enumerate(model.pairs):
            if w[l, m] < 0:
                raise ValueError("weights must be non-negative")
            model.matrices[p] = w[l, m] * np.eye(3)
        return model

    @classmethod
    def anisotropic(cls, num_labels: int, metrics: Dict[Tuple[int, int], np.ndarray],
                    default: float = 0.0) -> "SmoothnessModel":
        """``||A_lm v||_2`` with one positive-definite 3x3 ``A`` per listed pair.

        Unlisted pairs get the isotropic ``default * ||v||_1``.
        """
        model = cls.isotropic(num_labels, default)
        index = {pair: p for p, pair in enumerate(model.pairs)}
        for (l, m), A in metrics.items():
            key = (min(l, m), max(l, m))
            A = np.asarray(A, dtype=float).reshape(3, 3)
            if np.linalg.eigvalsh(0.5 * (A + A.T)).min() <= 0 and np.any(A):
                raise ValueError(f"metric for pair {key} is not positive definite")
            model.matrices[index[key]] = A
            model.orders[index[key]] = 2
        return model

    def phi(self, pair, v) -> np.ndarray:
        """Penalty of pair ``(l, m)`` for direction(s) ``v`` of shape ``(..., 3)``."""
        l, m = pair
        if l == m:
            return np.zeros(np.shape(v)[:-1])
        p = self.pairs.index((min(l, m), max(l, m)))
        return np.linalg.norm(np.asarray(v, float) @ self.matrices[p].T, ord=self.orders[p], axis=-1)

    def penalty(self, Ad: np.ndarray) -> np.ndarray:
        """Norms of ``A_p v`` given as ``(..., pairs, 3)``, summed over pairs."""
        out = np.zeros(Ad.shape[:-2])
        for p, r in enumerate(self.orders):
            out += np.linalg.norm(Ad[..., p, :], ord=int(r), axis=-1)
        return out

    def face_weights(self) -> np.ndarray:
        """``W[k, l, m] = phi_lm(e_k)``, zero on the diagonal."""
        W = np.zeros((3, self.num_labels, self.num_labels))
        for p, (l, m) in enumerate(self.pairs):
            W[:, l, m] = W[:, m, l] = np.linalg.norm(self.matrices[p], ord=self.orders[p], axis=0)
        return W

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrices)


def transition_differences(z: np.ndarray, model: SmoothnessModel) -> np.ndarray:
    """``z[s, :, l, m] - z[s, :, m, l]`` for every pair, shape ``(V, pairs, 3)``."""
    pl, pm = model.pair_index
    d = z[:, :, pl, pm] - z[:, :, pm, pl]
    return np.transpose(d, (0, 2, 1))


def smoothness_energy(z: np.ndarray, model: SmoothnessModel, per_voxel: bool = False):
    if len(model.pairs) == 0 or z.shape[0] == 0:
        return np.zeros(z.shape[0]) if per_voxel else 0.0
    if not per_voxel:
        pl, pm = model.pair_index
        return float(_kernels.smoothness(np.ascontiguousarray(z, dtype=np.float64), pl, pm,
                                         model.matrices, model.orders == 1))
    d = transition_differences(z, model)
    Ad = np.einsum("pjk,vpk->vpj", model.matrices, d)
    e = model.penalty(Ad)
    return e if per_voxel else float(e.sum())


def _marginals(x: np.ndarray, nbr: np.ndarray):
    return x[:, None, :], x[nbr]


def marginalization_residual(x, z: np.ndarray, nbr: np.ndarray = None) -> float:
    """Largest absolute violation of the row- and column-sum constraints."""
    if isinstance(x, LabelField):
        nbr = x.grid.forward_neighbors() if nbr is None else nbr
        x = x.values
    if x.shape[0] == 0:
        return 0.0
    a, b = _marginals(x, nbr)
    r = np.abs(z.sum(axis=3) - a).max()
    c = np.abs(z.sum(axis=2) - b).max()
    return float(max(r, c))


def _check_totals(x, nbr):
    tot = x.sum(axis=1)
    if tot.size and np.abs(tot[:, None] - tot[nbr]).max() > 1e-9:
        raise ValueError(
            "row and column totals differ (x must sum to the same value at every voxel)"
        )


def project_affine(x: np.ndarray, nbr: np.ndarray, z0: np.ndarray) -> np.ndarray:
    """Orthogonal projection of every slice onto its marginal constraints.

    For an ``n x n`` slice ``W0`` with target row sums ``a`` and column sums
    ``b`` (equal totals) the projection is
    ``W0 - r 1^T / n - 1 c^T / n + (sum r) / n^2`` with residuals
    ``r = W0 1 - a`` and ``c = W0^T 1 - b``.
    """
    n = x.shape[1]
    _check_totals(x, nbr)
    a, b = _marginals(x, nbr)
    r = z0.sum(axis=3) - a
    c = z0.sum(axis=2) - b
    return (z0 - r[..., :, None] / n - c[..., None, :] / n
            + r.sum(axis=-1)[..., None, None] / (n * n))


def repair_nonnegative(W: np.ndarray, max_rounds: int = 10_000):
    """Remove negative entries of slices without changing their marginals.

    Repeatedly takes the most negative entry ``(l1, m1)`` of a slice, the
    largest entries ``(l1, m2)`` in its row and ``(l2, m1)`` in its column,
    and moves ``eps`` around the rectangle: ``+eps`` at ``(l1, m1)`` and
    ``(l2, m2)``, ``-eps`` at ``(l1, m2)`` and ``(l2, m1)``, with ``eps`` as
    large as allowed.  Works in place on ``W`` of shape ``(S, n, n)`` and
    returns the number of substitutions per slice.
    """
    S, n, _ = W.shape
    counts = np.zeros(S, dtype=np.int64)
    flat = W.reshape(S, n * n)
    bad = np.flatnonzero(flat.min(axis=1) < 0)
    for _ in range(max_rounds):
        if bad.size == 0:
            return counts
        Wb = W[bad]
        ar = np.arange(bad.size)
        l1, m1 = np.divmod(Wb.reshape(bad.size, -1).argmin(axis=1), n)
        m2 = Wb[ar, l1, :].argmax(axis=1)
        l2 = Wb[ar, :, m1].argmax(axis=1)
        neg = -Wb[ar, l1, m1]
        eps = np.minimum(neg, np.minimum(Wb[ar, l1, m2], Wb[ar, l2, m1]))
        stuck = eps <= 0
        # no positive partner left: the negative entry is rounding noise
        Wb[ar[stuck], l1[stuck], m1[stuck]] = 0.0
        ok = ~stuck
        a, e = ar[ok], eps[ok]
        exact = e == neg[ok]
        Wb[a, l1[ok], m1[ok]] = np.where(exact, 0.0, Wb[a, l1[ok], m1[ok]] + e)
        Wb[a, l2[ok], m2[ok]] += e
        Wb[a, l1[ok], m2[ok]] -= e
        Wb[a, l2[ok], m1[ok]] -= e
        W[bad] = Wb
        counts[bad[ok]] += 1
        still = Wb.reshape(bad.size, -1).min(axis=1) < 0
        bad = bad[still]
    raise RuntimeError("non-negativity repair did not terminate")


def feasible_z_arrays(x: np.ndarray, nbr: np.ndarray, z_init: Optional[np.ndarray] = None):
    """Array form of :func:`feasible_z`; returns ``(z, substitutions)``.

    Compiled equivalent of :func:`project_affine` followed by
    :func:`repair_nonnegative`.
    """
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    V, n = x.shape
    z0 = np.zeros((V, 3, n, n)) if z_init is None else np.asarray(z_init, dtype=np.float64)
    z = np.empty((V, 3, n, n))
    counts = np.zeros((V, 3), dtype=np.int64)
    code = _kernels.feasible_z(np.ascontiguousarray(x, dtype=np.float64), nbr,
                               np.ascontiguousarray(z0), z, counts, 10_000)
    if code == _kernels.FEASIBLE_TOTALS:
        _check_totals(x, nbr)
    if code != _kernels.FEASIBLE_OK:
        raise RuntimeError("non-negativity repair did not terminate")
    return z, counts


def feasible_z(x: LabelField, z_init: Optional[np.ndarray] = None, return_counts: bool = False):
    """Transition gradients satisfying all regularizer constraints for ``x``.

    ``z_init`` (default 0) is first projected onto the marginal constraints
    slice by slice, then negative entries are repaired by
    :func:`repair_nonnegative`.
    """
    z, counts = feasible_z_arrays(x.values, x.grid.forward_neighbors(), z_init)
    return (z, counts) if return_counts else z


def binary_transitions(labeling: BinaryLabeling) -> np.ndarray:
    """The unique feasible ``z`` of a binary labeling."""
    grid = labeling.grid
    n = labeling.num_labels
    nbr = grid.forward_neighbors()
    z = np.zeros((grid.size, 3, n, n))
    s = np.arange(grid.size)
    for k in range(3):
        z[s, k, labeling.labels, labeling.labels[nbr[:, k]]] = 1.0
    return z


def boundary_area(labeling: BinaryLabeling, model: SmoothnessModel) -> float:
    """Sum of ``phi_lm(e_k)`` over axis-adjacent voxel pairs with different labels."""
    grid = labeling.grid
    vol = labeling.volume()
    W = model.face_weights()
    total = 0.0
    for k in range(3):
        if grid.dims[k] < 2:
            continue
        a = np.take(vol, np.arange(grid.dims[k] - 1), axis=k)
        b = np.take(vol, np.arange(1, grid.dims[k]), axis=k)
        total += W[k][a, b].sum()
    return float(total)


def binary_smoothness(labels: np.ndarray, grid: VoxelGrid, model: SmoothnessModel) -> np.ndarray:
    """Smoothness energy of many binary labelings at once.

    ``labels`` has shape ``(batch, voxels)``.  Each voxel's transition
    vector toward its forward neighbors is built from the labels directly,
    without going through ``z``.
    """
    labels = np.atleast_2d(labels)
    nbr = grid.forward_neighbors()
    out = np.zeros(labels.shape[0])
    for p, (l, m) in enumerate(model.pairs):
        A = model.matrices[p]
        if not np.any(A):
            continue
        d = np.zeros(labels.shape + (3,))
        for k in range(3):
            here, there = labels, labels[:, nbr[:, k]]
            d[..., k] = ((here == l) & (there == m)).astype(float) - ((here == m) & (there == l))
        out += np.linalg.norm(d @ A.T, ord=model.orders[p], axis=-1).sum(axis=1)
    return out
