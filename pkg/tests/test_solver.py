import numpy as np
import pytest
from hypothesis import given, strategies as st

from rayfusion.grid import BinaryLabeling, LabelSpace, VoxelGrid, uniform_init
from rayfusion.oracle import TinyInstance, brute_force_minimize, labeling_energy as oracle_energy
from rayfusion.rays import Ray, RayBundle, normalize
from rayfusion.raypot import Branch, build_visibility
from rayfusion.regularizer import SmoothnessModel
from rayfusion.solver import (PrimalDual, Problem, SolverConfig, labeling_energy, make_feasible,
                              primal_dual_gap, project_simplex, reconstruct, total_energy)
from rayfusion.validate import random_grid_rays, random_model, random_tiny_instance


def _problem(rng, dims=(3, 3, 2), L1=3, nrays=8, model=None):
    g = VoxelGrid(dims)
    rays = RayBundle.from_rays(random_grid_rays(rng, g, nrays, L1), L1)
    norm, const = normalize(rays)
    return Problem(g, norm, model or random_model(rng, L1), const)


def test_project_simplex_known_values():
    assert np.allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5])
    assert np.allclose(project_simplex([2.0, 0.0]), [1.0, 0.0])
    assert np.allclose(project_simplex([1.0, 1.0]), [0.5, 0.5])
    assert np.allclose(project_simplex([[3.0, 0.0], [0.0, 0.0]]), [[1, 0], [0.5, 0.5]])
    with pytest.raises(ValueError):
        project_simplex([])


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6))
def test_project_simplex_is_feasible_and_idempotent(v):
    u = project_simplex(np.array(v))
    assert abs(u.sum() - 1) <= 1e-12 and u.min() >= 0
    assert np.allclose(project_simplex(u), u, atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(inner_iters=0)
    assert SolverConfig(tie_branch="linear").tie_branch is Branch.LINEAR


def test_problem_rejects_unnormalized_costs():
    g = VoxelGrid((2, 1, 1))
    with pytest.raises(ValueError):
        Problem(g, RayBundle.from_rays([Ray([0], [[0.0, 1.0]])]), SmoothnessModel(2))
    with pytest.raises(ValueError):
        Problem(g, RayBundle.from_rays([Ray([5], [[0.0, -1.0]])]), SmoothnessModel(2))
    with pytest.raises(ValueError):
        Problem(g, RayBundle.from_rays([Ray([0], [[0.0, -1.0, 0.0]])]), SmoothnessModel(2))


@pytest.mark.parametrize("visibility", [True, False])
@pytest.mark.parametrize("anchor", [0.0, 0.1])
@pytest.mark.parametrize("balance", [1.0, 0.5])
def test_compiled_iterations_match_reference(visibility, anchor, balance):
    rng = np.random.default_rng(7)
    L1 = 3
    m = SmoothnessModel.anisotropic(L1, {(0, 1): np.diag([1.0, 2.0, 0.5])}, default=0.4)
    pb = _problem(rng, (3, 3, 3), L1, 15, m)
    x = rng.random((pb.grid.size, L1))
    x /= x.sum(axis=1, keepdims=True)
    xt, yt, zt = make_feasible(pb, x, np.zeros((pb.grid.size, 3, L1, L1)))
    lin = rng.random(pb.rays.num_positions) < 0.5
    a = PrimalDual(pb, xt, yt, zt, lin, visibility, anchor, balance)
    b = PrimalDual(pb, xt, yt, zt, lin, visibility, anchor, balance)
    a.iterate(25)
    b.iterate_reference(25)
    for name in ("x", "y", "z", "a", "b", "g", "mu", "nu", "q"):
        assert np.allclose(getattr(a, name), getattr(b, name), atol=1e-11), name


def test_gap_shrinks_with_iterations():
    rng = np.random.default_rng(2)
    pb = _problem(rng, model=SmoothnessModel.isotropic(3, 0.3))
    x = uniform_init(pb.grid, LabelSpace(3)).values
    xt, yt, zt = make_feasible(pb, x, np.zeros((pb.grid.size, 3, 3, 3)))
    pd = PrimalDual(pb, xt, yt, zt)
    pd.iterate(20)
    g1 = primal_dual_gap(pd)
    pd.iterate(2000)
    g2 = primal_dual_gap(pd)
    assert g2 < g1 and pd.dual_bound() <= pd.surrogate_energy() + 1e-9


def test_make_feasible_output_is_feasible(rng):
    pb = _problem(rng)
    x = rng.normal(size=(pb.grid.size, 3))
    xt, yt, zt = make_feasible(pb, x, rng.normal(size=(pb.grid.size, 3, 3, 3)))
    rep = total_energy(pb, xt, yt, zt)
    assert rep.simplex_residual <= 1e-12
    assert rep.visibility_residual <= 1e-12
    assert rep.marginalization_residual <= 1e-8


def test_labeling_energy_matches_oracle():
    rng = np.random.default_rng(4)
    for _ in range(20):
        inst = random_tiny_instance(rng)
        pb = inst.problem()
        lab = rng.integers(0, inst.labels.count, inst.grid.size)
        rep = labeling_energy(pb, BinaryLabeling(inst.grid, lab, inst.labels.count))
        assert rep.original == pytest.approx(oracle_energy(inst, lab[None])[0], abs=1e-9)


def test_accepted_energies_never_increase():
    rng = np.random.default_rng(11)
    for _ in range(10):
        pb = _problem(rng, nrays=20)
        rec = reconstruct(pb, SolverConfig(inner_iters=5, max_outer=30))
        assert np.all(np.diff(rec.accepted_energies) <= 1e-9)
        assert len(rec.trace) <= 30
        assert rec.report.total == pytest.approx(
            labeling_energy(pb, rec.labeling).total)


def test_reconstruct_never_beats_global_optimum():
    rng = np.random.default_rng(12)
    for _ in range(10):
        inst = random_tiny_instance(rng)
        _, best = brute_force_minimize(inst)
        rec = reconstruct(inst.problem(), SolverConfig(max_outer=40))
        assert rec.report.original >= best - 1e-9


def test_zero_costs_give_zero_energy_constant_labeling():
    g = VoxelGrid((3, 3, 1))
    rays = RayBundle.from_rays([Ray([0, 1, 2], np.zeros((3, 2)))])
    rec = reconstruct(Problem(g, rays, SmoothnessModel.isotropic(2, 0.1)), SolverConfig(max_outer=20))
    assert rec.report.total == 0.0
    assert len(set(rec.labeling.labels.tolist())) == 1


def test_no_rays_no_prior_warns():
    g = VoxelGrid((2, 2, 2))
    with pytest.warns(UserWarning):
        rec = reconstruct(Problem(g, RayBundle.empty(2), SmoothnessModel(2)))
    assert rec.report.total == 0.0


def test_single_ray_prefers_deepest_cost_with_linear_ties():
    inst = TinyInstance(VoxelGrid((3, 1, 1)),
                        [Ray(np.arange(3), [[0.0, -2.0], [0.0, -3.0], [0.0, -2.0]])],
                        SmoothnessModel(2), LabelSpace(2))
    rec = reconstruct(inst.problem(), SolverConfig(tie_branch=Branch.LINEAR))
    assert rec.report.original == pytest.approx(-3.0, abs=1e-12)
    assert np.flatnonzero(rec.labeling.labels)[0] == 1


def test_zero_tie_stops_at_a_critical_point():
    inst = TinyInstance(VoxelGrid((3, 1, 1)),
                        [Ray(np.arange(3), [[0.0, -2.0], [0.0, -3.0], [0.0, -2.0]])],
                        SmoothnessModel(2), LabelSpace(2))
    rec = reconstruct(inst.problem(), SolverConfig(tie_branch=Branch.ZERO))
    assert rec.report.original == pytest.approx(-2.0, abs=1e-12)


def test_gap_check_runs_and_records_gap():
    rng = np.random.default_rng(3)
    pb = _problem(rng, nrays=5)
    rec = reconstruct(pb, SolverConfig(inner_iters=5, max_outer=5, gap_check=True))
    assert all(r.gap is not None and r.gap >= 0 for r in rec.trace)


def test_warm_start_from_x0():
    rng = np.random.default_rng(5)
    pb = _problem(rng)
    first = reconstruct(pb, SolverConfig(max_outer=20))
    again = reconstruct(pb, SolverConfig(max_outer=5), x0=first.labeling.one_hot().values)
    # a binary start has unique y and z, so the first step scores the labeling itself
    assert again.accepted_energies[0] == pytest.approx(first.report.total, rel=1e-12, abs=1e-12)
