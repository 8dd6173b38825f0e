"""Majorize-minimize reconstruction around a preconditioned primal-dual solver.

The surrogate program solved between majorization steps is

    min  sum_p c[p] . y[p]  +  sum_s sum_{l<m} phi_lm(z[s,:,l,m] - z[s,:,m,l])

over ``x`` (per-voxel probability simplex), ``y >= 0`` and ``z >= 0`` with

    y[p, l] <= y[p-1, 0]                     (a)   anchor y[-1, 0] = 1
    y[p, l] <= x[s_p, l]                     (b)
    sum_{l>0} y[p, l] <= g_p(x, y)           (g)   majorized visibility
    sum_m z[s,k,l,m] = x[s, l]               (mu)
    sum_l z[s,k,l,m] = x[s+e_k, m]           (nu)

and the smoothness term written through dual vectors ``q`` in the unit
ball (``phi(v) = max_{|q|<=1} <q, A v>``).  The saddle-point problem is
solved with the first-order primal-dual method using diagonal step sizes
``tau_j = 1 / sum_i |K_ij|`` and ``sigma_i = 1 / sum_j |K_ij|``.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _kernels
from .grid import BinaryLabeling, LabelField, LabelSpace, VoxelGrid, argmax_round, uniform_init
from .rays import RayBundle, as_bundle
from .raypot import Branch, MajorizerState, build_visibility, check_consistency, majorize, ray_energy
from .regularizer import (SmoothnessModel, binary_transitions, feasible_z_arrays,
                          marginalization_residual, smoothness_energy)

log = logging.getLogger(__name__)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{u >= 0, sum u = 1}`` (rows of a 2-D input).

    Sort-and-threshold: with ``u`` sorted in decreasing order, the threshold
    is ``(sum_{j<=rho} u_j - 1) / rho`` for the largest ``rho`` that keeps
    ``u_rho`` above it.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[-1] == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project non-finite values")
    out = np.array(v.reshape(-1, v.shape[-1]), dtype=np.float64, order="C")
    _kernels.project_simplex_rows(out)
    return out.reshape(v.shape)


@dataclass
class SolverConfig:
    inner_iters: int = 10
    max_outer: int = 300
    rel_energy_tol: float = 1e-6
    tie_branch: Branch = Branch.ZERO
    gap_check: bool = False
    # with gap_check, the minimization step is repeated until the gap is
    # below initial_gap / n, at most this many times
    max_restarts: int = 20
    window: int = 10
    # primal step multiplier; dual steps are divided by it
    step_balance: float = 1.0

    def __post_init__(self):
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        self.tie_branch = Branch[self.tie_branch.upper()] if isinstance(self.tie_branch, str) \
            else Branch(self.tie_branch)


@dataclass
class EnergyReport:
    ray_term: float
    smoothness_term: float
    omitted_constants: float
    total: float
    simplex_residual: float = 0.0
    visibility_residual: float = 0.0
    marginalization_residual: float = 0.0

    @property
    def original(self) -> float:
        """Energy in terms of the raw (un-normalized) ray costs."""
        return self.total + self.omitted_constants


class Problem:
    """Static data of one reconstruction: grid, normalized rays and prior."""

    def __init__(self, grid: VoxelGrid, rays: RayBundle, model: SmoothnessModel,
                 constants=None):
        self.grid = grid
        self.rays = as_bundle(rays)
        self.model = model
        self.num_labels = model.num_labels
        if self.rays.num_labels != self.num_labels:
            raise ValueError("rays and smoothness model disagree on the label count")
        if self.rays.num_positions and np.any(self.rays.costs > 0):
            raise ValueError("ray costs must be normalized (non-positive)")
        if np.any(self.rays.free_cost != 0):
            raise ValueError("ray free-space costs must be shifted to 0")
        if self.rays.num_positions and (self.rays.voxels.min() < 0
                                        or self.rays.voxels.max() >= grid.size):
            raise ValueError("ray voxel index outside the grid")
        self.constants = np.zeros(len(self.rays)) if constants is None \
            else np.asarray(constants, dtype=float)
        self.nbr = grid.forward_neighbors()

    @property
    def omitted(self) -> float:
        return float(self.constants.sum())


def make_feasible(problem: Problem, x: np.ndarray, z: np.ndarray):
    """Feasible ``(x, y, z)`` near the given iterate.

    ``x`` is projected per voxel onto the simplex, ``y`` rebuilt as the
    cheapest feasible visibility for that ``x`` and ``z`` repaired onto the
    regularizer constraints.
    """
    xt = project_simplex(x)
    yt = build_visibility(xt, problem.rays)
    zt, _ = feasible_z_arrays(xt, problem.nbr, z)
    return xt, yt, zt


def total_energy(problem: Problem, x, y, z) -> EnergyReport:
    r = ray_energy(y, problem.rays) if problem.rays.num_positions else 0.0
    s = smoothness_energy(z, problem.model) if not problem.model.is_zero else 0.0
    v = check_consistency(x, y, problem.rays) if problem.rays.num_positions else (0.0, 0.0)
    simplex = float(max(np.abs(x.sum(axis=1) - 1).max(initial=0), (-x).max(initial=0)))
    return EnergyReport(
        ray_term=r,
        smoothness_term=s,
        omitted_constants=problem.omitted,
        total=r + s,
        simplex_residual=simplex,
        visibility_residual=float(max(v[0], v[1])),
        marginalization_residual=marginalization_residual(x, z, problem.nbr),
    )


def _energy(problem: Problem, y, z) -> float:
    e = ray_energy(y, problem.rays) if problem.rays.num_positions else 0.0
    if not problem.model.is_zero:
        e += smoothness_energy(z, problem.model)
    return e


def labeling_energy(problem: Problem, labeling: BinaryLabeling) -> EnergyReport:
    x = labeling.one_hot().values
    y = build_visibility(x, problem.rays)
    z = binary_transitions(labeling)
    return total_energy(problem, x, y, z)


class PrimalDual:
    """Diagonally preconditioned primal-dual iterations on the surrogate.

    ``visibility=False`` drops the (g) rows entirely, which gives the plain
    convex relaxation of the ray potential.  ``anchor > 0`` adds
    ``anchor / 2 * ||u - u_start||^2`` to the primal objective; for a small
    enough weight the minimizer is the optimum of the unmodified linear
    program closest to the starting point, which picks a reproducible
    solution out of a degenerate optimal face.
    """

    def __init__(self, problem: Problem, x, y, z, linear=None, visibility: bool = True,
                 anchor: float = 0.0, balance: float = 1.0):
        self.pb = problem
        self.gamma = float(balance)
        self.visibility = visibility
        self.anchor = float(anchor)
        rays = problem.rays
        P, L1, V = rays.num_positions, problem.num_labels, problem.grid.size
        self.P, self.L1, self.V = P, L1, V
        self.vox = rays.voxels
        self.nf = np.flatnonzero(~rays.is_first)
        self.has_next = rays.has_next
        self.costs = rays.costs
        pl, pm = problem.model.pair_index
        self.pl, self.pm = pl, pm
        self.A = problem.model.matrices
        # dual set of an l1 penalty is the unit box, of l2 the unit ball
        self.box = problem.model.orders == 1
        self.reg_on = np.array([np.any(A) for A in self.A], dtype=bool)

        self.a = np.zeros((P, L1))
        self.b = np.zeros((P, L1))
        self.g = np.zeros(P)
        self.mu = np.zeros((V, 3, L1))
        self.nu = np.zeros((V, 3, L1))
        self.q = np.zeros((V, len(pl), 3))
        self.linear = np.zeros(P, dtype=bool) if linear is None else np.asarray(linear, bool).copy()

        self._nbr_flat = [(problem.nbr[:, k, None] * L1 + np.arange(L1)).ravel() for k in range(3)]
        self._vox_count = np.bincount(self.vox, minlength=V).astype(float)
        self._nbr_count = sum(np.bincount(problem.nbr[:, k], minlength=V) for k in range(3))
        self._static_steps()
        self._branch_steps()
        self.set_primal(x, y, z)
        self.u0 = (self.x.copy(), self.y.copy(), self.z.copy())
        self.iterations = 0

    # -- step sizes ---------------------------------------------------------

    def _static_steps(self):
        L1 = self.L1
        first = ~np.zeros(self.P, bool)
        first[self.nf] = False
        gam = self.gamma
        self.sig_a = 1.0 / np.where(first, 1.0, 2.0) / gam
        self.sig_b = 0.5 / gam
        self.sig_m = 1.0 / (L1 + 1) / gam
        colA = np.abs(self.A).sum(axis=1)          # (pairs, k): sum_j |A_jk|
        tz = np.full((3, L1, L1), 2.0)
        for p in range(len(self.pl)):
            tz[:, self.pl[p], self.pm[p]] += colA[p]
            tz[:, self.pm[p], self.pl[p]] += colA[p]
        self.tau_z = gam / tz
        rowA = 2.0 * np.abs(self.A).sum(axis=2).max(axis=1)   # (pairs,)
        self.sig_q = np.where(rowA > 0, 1.0 / np.where(rowA > 0, rowA, 1.0), 0.0) / gam
        self._first = first

    def _branch_steps(self):
        L1, vis = self.L1, float(self.visibility)
        lin = self.linear & self.visibility
        self.sig_g = 1.0 / np.maximum(
            (L1 - 1) + lin * np.where(self._first, 1.0, 2.0), 1.0) / self.gamma
        ty = np.full((self.P, L1), 2.0 + vis)
        nxt_lin = np.zeros(self.P)
        nxt_lin[self.nf - 1] = lin[self.nf]
        ty[:, 0] = 2.0 + self.has_next * (L1 + nxt_lin)
        self.tau_y = self.gamma / ty
        lin_count = np.bincount(self.vox, weights=lin.astype(float), minlength=self.V)
        tx = self._vox_count[:, None] + 3.0 + self._nbr_count[:, None] + np.zeros((1, L1))
        tx[:, 0] += lin_count
        self.tau_x = self.gamma / tx.max(axis=1)

    # -- state --------------------------------------------------------------

    def set_primal(self, x, y, z):
        self.x = np.array(x, dtype=float)
        self.y = np.array(y, dtype=float)
        self.z = np.array(z, dtype=float)
        self.xb, self.yb, self.zb = self.x.copy(), self.y.copy(), self.z.copy()

    def set_branch(self, linear):
        linear = np.asarray(linear, dtype=bool)
        flipped = linear != self.linear
        self.g[flipped] = 0.0
        self.linear = linear.copy()
        self._branch_steps()

    # -- operators ----------------------------------------------------------

    def _prev(self, y):
        prev = np.ones(self.P)
        prev[self.nf] = y[self.nf - 1, 0]
        return prev

    def _diff(self, z):
        d = z[:, :, self.pl, self.pm] - z[:, :, self.pm, self.pl]   # (V, 3, pairs)
        return np.transpose(d, (0, 2, 1))

    def _dual_step(self, x, y, z):
        prev = self._prev(y)
        xs = x[self.vox]
        self.a = np.maximum(0.0, self.a + self.sig_a[:, None] * (y - prev[:, None]))
        self.b = np.maximum(0.0, self.b + self.sig_b * (y - xs))
        if self.visibility:
            rhs = np.where(self.linear, prev - xs[:, 0], 0.0)
            self.g = np.maximum(0.0, self.g + self.sig_g * (y[:, 1:].sum(axis=1) - rhs))
        self.mu += self.sig_m * (z.sum(axis=3) - x[:, None, :])
        self.nu += self.sig_m * (z.sum(axis=2) - x[self.pb.nbr])
        if self.reg_on.any():
            Ad = np.einsum("pjk,vpk->vpj", self.A, self._diff(z))
            q = self.q + self.sig_q[None, :, None] * Ad
            nrm = np.linalg.norm(q, axis=2, keepdims=True)
            self.q = np.where(self.box[None, :, None], np.clip(q, -1.0, 1.0),
                              q / np.maximum(1.0, nrm))

    def _adjoint(self):
        """``K^T lambda`` split into the x, y and z blocks."""
        V, L1 = self.V, self.L1
        gl = self.g * self.linear if self.visibility else np.zeros(self.P)
        gy = self.a + self.b
        if self.visibility:
            gy[:, 1:] += self.g[:, None]
        gy[self.nf - 1, 0] -= self.a[self.nf].sum(axis=1) + gl[self.nf]

        flat_vox = (self.vox[:, None] * L1 + np.arange(L1)).ravel()
        gx = -np.bincount(flat_vox, weights=self.b.ravel(), minlength=V * L1).reshape(V, L1)
        if self.visibility:
            gx[:, 0] += np.bincount(self.vox, weights=gl, minlength=V)
        gx -= self.mu.sum(axis=1)
        for k in range(3):
            gx -= np.bincount(self._nbr_flat[k], weights=self.nu[:, k, :].ravel(),
                              minlength=V * L1).reshape(V, L1)

        gz = self.mu[:, :, :, None] + self.nu[:, :, None, :]
        if self.reg_on.any():
            ATq = np.einsum("pjk,vpj->vkp", self.A, self.q)      # (V, 3, pairs)
            gz[:, :, self.pl, self.pm] += ATq
            gz[:, :, self.pm, self.pl] -= ATq
        return gx, gy, gz

    def iterate(self, n: int):
        """``n`` iterations with the compiled sweeps."""
        _kernels.iterate(
            int(n), self.x, self.y, self.z, self.xb, self.yb, self.zb,
            self.a, self.b, self.g, self.mu, self.nu, self.q,
            self.costs, self.vox, self._first, self.has_next, self.linear, self.visibility,
            self.pb.nbr, self.A, self.pl, self.pm, self.reg_on, self.box,
            self.tau_x, self.tau_z, self.sig_g, self.sig_m, self.sig_q, self.gamma, self.anchor, *self.u0)
        self.iterations += n

    def iterate_reference(self, n: int):
        """``n`` iterations with plain array operations (slow, for testing)."""
        for _ in range(n):
            self._dual_step(self.xb, self.yb, self.zb)
            gx, gy, gz = self._adjoint()
            x_old, y_old, z_old = self.x, self.y, self.z
            tx = self.tau_x[:, None]
            vx = x_old - tx * gx
            vy = y_old - self.tau_y * (self.costs + gy)
            vz = z_old - self.tau_z * gz
            if self.anchor:
                e = self.anchor
                vx = (vx + e * tx * self.u0[0]) / (1 + e * tx)
                vy = (vy + e * self.tau_y * self.u0[1]) / (1 + e * self.tau_y)
                vz = (vz + e * self.tau_z * self.u0[2]) / (1 + e * self.tau_z)
            self.x = project_simplex(vx)
            self.y = np.clip(vy, 0.0, 1.0)
            self.z = np.clip(vz, 0.0, 1.0)
            self.xb = 2.0 * self.x - x_old
            self.yb = 2.0 * self.y - y_old
            self.zb = 2.0 * self.z - z_old
        self.iterations += n

    # -- diagnostics --------------------------------------------------------

    def surrogate_energy(self) -> float:
        e = float(np.einsum("pl,pl->", self.costs, self.y))
        if not self.pb.model.is_zero:
            e += smoothness_energy(self.z, self.pb.model)
        return e

    def dual_bound(self) -> float:
        """Lower bound on the surrogate optimum from the current multipliers.

        Uses the implied boxes ``y, z in [0, 1]`` so the bound stays finite.
        """
        gx, gy, gz = self._adjoint()
        bound = gx.min(axis=1).sum()
        bound += np.minimum(0.0, self.costs + gy).sum()
        bound += np.minimum(0.0, gz).sum()
        first = self._first
        bound -= self.a[first].sum()
        if self.visibility:
            bound -= self.g[first & self.linear].sum()
        return float(bound)

    def constraint_residual(self) -> float:
        prev = self._prev(self.y)
        xs = self.x[self.vox]
        res = [0.0]
        if self.P:
            res += [(self.y - prev[:, None]).max(), (self.y - xs).max()]
            if self.visibility:
                rhs = np.where(self.linear, prev - xs[:, 0], 0.0)
                res.append((self.y[:, 1:].sum(axis=1) - rhs).max())
        res.append(np.abs(self.z.sum(axis=3) - self.x[:, None, :]).max(initial=0))
        res.append(np.abs(self.z.sum(axis=2) - self.x[self.pb.nbr]).max(initial=0))
        return float(max(res))


def primal_dual_gap(pd: PrimalDual) -> float:
    """Feasible primal energy minus the dual bound, clipped at zero."""
    xt, yt, zt = make_feasible(pd.pb, pd.x, pd.z)
    primal = total_energy(pd.pb, xt, yt, zt).total
    return max(0.0, primal - pd.dual_bound())


@dataclass
class TraceRow:
    outer_step: int
    accepted: bool
    feasible_energy: float
    surrogate_energy: float
    gap: Optional[float]
    wall_ms: float


@dataclass
class Reconstruction:
    labeling: BinaryLabeling
    report: EnergyReport
    relaxed: LabelField
    best_energy: float
    accepted_energies: List[float]
    trace: List[TraceRow] = field(default_factory=list)
    inner_iterations: int = 0


def reconstruct(problem: Problem, config: SolverConfig = None, x0=None) -> Reconstruction:
    """Majorize-minimize from the uniform labeling (or ``x0``)."""
    config = config or SolverConfig()
    grid, L1 = problem.grid, problem.num_labels
    t_start = time.perf_counter()
    if len(problem.rays) == 0 and problem.model.is_zero:
        warnings.warn("no rays and no regularizer: returning the uniform labeling")
        x = uniform_init(grid, LabelSpace(L1))
        lab = argmax_round(x)
        return Reconstruction(lab, labeling_energy(problem, lab), x, 0.0, [0.0])

    x = uniform_init(grid, LabelSpace(L1)).values if x0 is None else np.array(x0, float)
    y = build_visibility(project_simplex(x), problem.rays)
    z = np.zeros((grid.size, 3, L1, L1))
    pd = PrimalDual(problem, x, y, z, balance=config.step_balance)

    best = np.inf
    best_state = None
    accepted: List[float] = []
    trace: List[TraceRow] = []
    gap0 = None
    for n in range(1, config.max_outer + 1):
        xt, yt, zt = make_feasible(problem, pd.x, pd.z)
        energy = _energy(problem, yt, zt)
        ok = energy <= best
        if ok:
            best = energy
            best_state = (xt, yt, zt)
            branch = majorize(xt, yt, problem.rays, config.tie_branch)
            pd.set_primal(xt, yt, zt)
            pd.set_branch(branch.linear)
            accepted.append(energy)

        gap = None
        pd.iterate(config.inner_iters)
        if config.gap_check:
            gap = primal_dual_gap(pd)
            gap0 = gap if gap0 is None else gap0
            restarts = 0
            while gap > gap0 / n and restarts < config.max_restarts:
                pd.iterate(config.inner_iters)
                gap = primal_dual_gap(pd)
                restarts += 1
        trace.append(TraceRow(n, ok, energy, pd.surrogate_energy(), gap,
                              1000.0 * (time.perf_counter() - t_start)))
        log.debug("step %d accepted=%s energy=%.6g", n, ok, energy)

        w = config.window
        if len(accepted) > w:
            change = accepted[-w - 1] - accepted[-1]
            if change <= config.rel_energy_tol * max(abs(accepted[-1]), 1.0):
                break

    xt, yt, zt = best_state
    relaxed = LabelField(grid, xt)
    lab = argmax_round(relaxed)
    return Reconstruction(lab, labeling_energy(problem, lab), relaxed, best, accepted,
                          trace, pd.iterations)
