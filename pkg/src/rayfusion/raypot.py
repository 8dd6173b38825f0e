"""Visibility variables along rays and the linear majorizer of the
visibility-consistency constraint.

For a ray with positions ``i = 0..N`` the visibility variable ``y[i, l]``
is 1 when everything in front of ``i`` is free and label ``l`` sits at
``i``.  With non-positive costs the ray potential for a relaxed ``x`` is

    min  sum_{i,l} c[i, l] y[i, l]
    s.t. 0 <= y[i, l] <= y[i-1, 0],  y[i, l] <= x[s_i, l]
         sum_{l>0} y[i, l] <= max(0, y[i-1, 0] - x[s_i, 0])

with the anchor ``y[-1, 0] = 1``.  The last line is the non-convex
visibility-consistency constraint; :func:`majorize` replaces its right-hand
side by a linear function that never exceeds it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .grid import LabelField
from .rays import Ray, RayBundle, as_bundle


class Branch(enum.IntEnum):
    ZERO = 0
    LINEAR = 1


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, LabelField) else np.asarray(x, dtype=float)


def previous_free(y: np.ndarray, rays: RayBundle) -> np.ndarray:
    """``y[i-1, 0]`` for every flat position, 1 at the start of each ray."""
    prev = np.ones(rays.num_positions)
    nf = ~rays.is_first
    prev[nf] = y[np.flatnonzero(nf) - 1, 0]
    return prev


def build_visibility(x, rays) -> np.ndarray:
    """Cheapest visibility assignment that is feasible for ``x``.

    Free-space visibility is the running minimum of ``x[:, 0]`` along each
    ray.  Occupied labels are then filled position by position, most
    negative cost first (ties to the smaller label), up to ``x[s_i, l]`` and
    up to the remaining visibility budget ``max(0, y[i-1, 0] - x[s_i, 0])``.
    Returns an array shaped like the rays' cost table.
    """
    xv = np.ascontiguousarray(_values(x), dtype=np.float64)
    if np.any(xv < 0):
        raise ValueError("x must be non-negative")
    bundle = as_bundle(rays)
    y = np.zeros(bundle.costs.shape)
    order = np.argsort(bundle.costs[:, 1:], axis=1, kind="stable") + 1
    _kernels.build_visibility(xv, bundle.voxels, bundle.is_first, order, y)
    return y


def ray_energy(y: np.ndarray, rays, per_ray: bool = False):
    """``sum_{i,l} c[i, l] y[i, l]`` (plus ``free_cost * y[N, 0]`` if set)."""
    bundle = as_bundle(rays)
    y = np.asarray(y, dtype=float).reshape(bundle.costs.shape)
    terms = np.einsum("pl,pl->p", bundle.costs, y)
    per = np.bincount(bundle.ray_id, weights=terms, minlength=len(bundle))
    if np.any(bundle.free_cost != 0):
        last = bundle.offsets[1:] - 1
        ok = bundle.lengths > 0
        per[ok] += bundle.free_cost[ok] * y[last[ok], 0]
    return per if per_ray else float(per.sum())


class Violation(NamedTuple):
    visibility: float
    box: float


def check_consistency(x, y, rays) -> Violation:
    """Worst violation of the visibility-consistency and box constraints."""
    xv = _values(x)
    bundle = as_bundle(rays)
    y = np.asarray(y, dtype=float).reshape(bundle.costs.shape)
    if bundle.num_positions == 0:
        return Violation(0.0, 0.0)
    xs = xv[bundle.voxels]
    prev = previous_free(y, bundle)
    vis = y[:, 1:].sum(axis=1) - np.maximum(0.0, prev - xs[:, 0])
    box = np.max([
        (-y).max(),
        (y - prev[:, None]).max(),
        (y - xs).max(),
    ])
    return Violation(max(0.0, float(vis.max())), max(0.0, float(box)))


@dataclass
class MajorizerState:
    """Per-position branch of the linear majorizer (True = LINEAR)."""

    linear: np.ndarray
    tie: Branch = Branch.ZERO

    def flipped(self, other: "MajorizerState") -> np.ndarray:
        return self.linear != other.linear


def majorize(x, y, rays, tie: Branch = Branch.ZERO) -> MajorizerState:
    """Choose the branch at every ray position from the linearization point.

    LINEAR where ``y[i-1, 0] > x[s_i, 0]``, ZERO where it is smaller; equal
    values take ``tie``.
    """
    xv = _values(x)
    bundle = as_bundle(rays)
    prev = previous_free(np.asarray(y, dtype=float).reshape(bundle.costs.shape), bundle)
    xf = xv[bundle.voxels, 0]
    linear = prev > xf
    if tie == Branch.LINEAR:
        linear |= prev == xf
    return MajorizerState(linear, Branch(tie))


def majorizer_bound(xf, prev_yf, linear) -> np.ndarray:
    """Right-hand side ``g`` of the majorized constraint."""
    return np.where(linear, np.asarray(prev_yf) - np.asarray(xf), 0.0)


def branch_at(xf_n, yf_n, tie: Branch = Branch.ZERO) -> np.ndarray:
    """Elementwise branch choice for linearization points ``(xf_n, yf_n)``."""
    xf_n, yf_n = np.asarray(xf_n), np.asarray(yf_n)
    lin = yf_n > xf_n
    if tie == Branch.LINEAR:
        lin = lin | (yf_n == xf_n)
    return lin
