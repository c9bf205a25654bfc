"""Tests for time grids, the mollifier, the partition of unity and the flow maps."""

import math

import numpy as np
import pytest
from conftest import make_step
from hypothesis import given
from hypothesis import strategies as st

from services.flowtime import (
    CFLError,
    CharacteristicSolver,
    StencilError,
    TimeGrid,
    advecting_c1,
    build_partition,
    mollifier_moment,
    mollifier_weights,
    mollify_time,
    richardson_ratio,
    smooth_step,
    solve_flow,
    time_derivative,
)
from services.identities import random_divergence_free
from services.spectral import Grid, ScalarField, VectorField


def _series(grid, times, fn):
    X, Y = grid.mesh()
    return ScalarField.stack([ScalarField.from_physical(grid, fn(t, X, Y)) for t in times])


def _shear(grid, nt):
    """v = (sin y, 0) at every sample; Λv = v."""
    _, Y = grid.mesh()
    v = VectorField.from_physical(grid, np.stack([np.sin(Y), np.zeros_like(Y)]))
    return VectorField.stack([v] * nt)


# ============ Time grid ============

def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 0.1, 2)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 0.0, 10)
    tg = TimeGrid.spanning(1.0, 2.0, 11)
    assert tg.dt == pytest.approx(0.1)
    assert tg.t1 == pytest.approx(2.0)
    assert list(tg.inside(1.0, 1.35)) == [1, 2, 3]


def test_mollification_needs_resolution():
    tg = TimeGrid(0.0, 0.01, 50)
    tg.check_mollification(0.08)
    with pytest.raises(ValueError):
        tg.check_mollification(0.05)


# ============ Derivative ============

def test_derivative_of_quadratic_is_exact(grid32):
    tg = TimeGrid(0.0, 0.1, 12)
    series = _series(grid32, tg.times, lambda t, X, Y: t**2 * np.cos(X))
    expected = _series(grid32, tg.times, lambda t, X, Y: 2 * t * np.cos(X))
    np.testing.assert_allclose(time_derivative(series, tg.dt).coeffs, expected.coeffs, atol=1e-12)


def test_richardson_ratio_is_second_order(grid32):
    tg = TimeGrid(0.0, 0.01, 41)
    series = _series(grid32, tg.times, lambda t, X, Y: np.sin(3 * t) * np.cos(X + Y))
    assert 3.0 < richardson_ratio(series, tg.dt) < 5.0


def test_richardson_ratio_short_series(grid32):
    tg = TimeGrid(0.0, 0.1, 10)
    series = _series(grid32, tg.times, lambda t, X, Y: np.sin(t) * np.cos(X))
    assert math.isnan(richardson_ratio(series, tg.dt))


# ============ Mollifier ============

@given(ratio=st.integers(min_value=8, max_value=40))
def test_mollifier_has_unit_mass(ratio):
    w = mollifier_weights(ratio * 0.01, 0.01)
    assert w.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(w, w[::-1])
    assert 0 < mollifier_moment(ratio * 0.01, 0.01) < 1


def test_mollifier_keeps_constants(grid32):
    tg = TimeGrid(0.0, 0.01, 40)
    series = _series(grid32, tg.times, lambda t, X, Y: np.cos(X) + 0 * t)
    out = mollify_time(series, tg, 0.08)
    np.testing.assert_allclose(out.coeffs, series.coeffs, atol=1e-14)


def test_mollifier_holds_both_ends(grid32):
    tg = TimeGrid(0.0, 0.01, 40)
    series = _series(grid32, tg.times, lambda t, X, Y: t * np.cos(X))
    out = mollify_time(series, tg, 0.08)
    # a ramp is reproduced away from the ends and bent toward the held values near them
    np.testing.assert_allclose(out.coeffs[8:32], series.coeffs[8:32], atol=1e-14)
    assert np.abs(out.coeffs[0]).max() > np.abs(series.coeffs[0]).max()
    assert np.abs(out.coeffs[-1]).max() < np.abs(series.coeffs[-1]).max()


def test_mollifier_error_is_order_tau(grid32):
    tg = TimeGrid(0.0, 0.005, 200)
    series = _series(grid32, tg.times, lambda t, X, Y: np.sin(2 * t) * np.cos(X))
    tau = 0.08
    out = mollify_time(series, tg, tau)
    interior = slice(20, 180)
    err = np.abs(out.physical[interior] - series.physical[interior]).max()
    assert err <= mollifier_moment(tau, tg.dt) * tau * 2.0


def test_mollifier_stencil(grid32):
    tg = TimeGrid(0.0, 0.01, 10)
    series = _series(grid32, tg.times, lambda t, X, Y: np.cos(X) + 0 * t)
    with pytest.raises(StencilError):
        mollify_time(series, tg, 0.08)


# ============ Partition ============

def test_smooth_step_symmetry():
    s = np.linspace(0, 1, 101)
    np.testing.assert_allclose(smooth_step(s) + smooth_step(1 - s), 1.0, atol=1e-15)
    assert smooth_step(np.array(0.0)) == 0.0
    assert smooth_step(np.array(1.0)) == 1.0


def test_partition_sums_to_one():
    partition = build_partition(make_step(tau_c=0.1), (0.35, 0.92))
    assert partition.indices == tuple(range(3, 11))
    t = np.linspace(0.3, 1.0, 2001)
    np.testing.assert_allclose(partition.sum_squares(t), 1.0, atol=1e-14)
    assert partition.derivative_constant() <= math.pi * (1 + 1e-12)


def test_partition_families_alternate():
    step = make_step(tau_c=0.1)
    partition = build_partition(step, (0.35, 0.92))
    tags = [partition.family_tag(i) for i in partition.indices]
    assert all(a[1] != b[1] for a, b in zip(tags, tags[1:]))
    assert all(tag[0] == step.parity for tag in tags)


def test_partition_of_nothing():
    partition = build_partition(make_step(), None)
    assert partition.indices == ()
    assert partition.covered is None


def test_partition_clamps_near_zero():
    partition = build_partition(make_step(tau_c=0.1), (0.01, 0.3))
    assert partition.indices[0] == 1


def test_chi_derivative_matches_differences():
    partition = build_partition(make_step(tau_c=0.1), (0.35, 0.92))
    t = np.linspace(0.41, 0.59, 4001)
    numeric = np.gradient(partition.chi(5, t), t)
    np.testing.assert_allclose(partition.chi_dt(5, t)[5:-5], numeric[5:-5], atol=1e-3)


# ============ Flow maps ============

def test_shear_flow_is_exact(grid32):
    tg = TimeGrid(0.0, 0.05, 41)
    v = _shear(grid32, tg.nt)
    partition = build_partition(make_step(tau_c=0.5), (0.5, 1.5))
    flow = solve_flow(v, tg, 2, partition)
    _, Y = grid32.mesh()
    assert flow.anchor == 1.0
    for j, t in enumerate(flow.times):
        np.testing.assert_allclose(flow.displacement[j, 0], (1.0 - t) * np.sin(Y), atol=1e-10)
        np.testing.assert_allclose(flow.displacement[j, 1], 0.0, atol=1e-12)
    assert flow.max_jacobian_defect() < 1e-10
    assert flow.transport_constant(advecting_c1(v.sample(0))) <= 2.0
    assert flow.time_derivative_sup() == pytest.approx(1.0, rel=1e-6)


def test_flow_is_identity_at_anchor(grid32):
    tg = TimeGrid(0.0, 0.05, 41)
    v = _shear(grid32, tg.nt)
    partition = build_partition(make_step(tau_c=0.5), (0.5, 1.5))
    flow = solve_flow(v, tg, 2, partition)
    at_anchor = flow.local(20)
    assert np.all(flow.displacement[at_anchor] == 0.0)
    with pytest.raises(KeyError):
        flow.local(0)


def test_cfl_limit(grid32):
    tg = TimeGrid(0.0, 0.05, 41)
    solver = CharacteristicSolver(_shear(grid32, tg.nt), tg, max_substeps=3)
    with pytest.raises(CFLError) as info:
        solver.substeps(0.0, 1.0)
    assert info.value.required_substeps > 3


def test_zero_velocity_needs_no_steps(grid32):
    tg = TimeGrid(0.0, 0.05, 41)
    solver = CharacteristicSolver(VectorField.zeros(grid32, (tg.nt,)), tg)
    X, Y = grid32.mesh()
    X1, Y1 = solver.integrate(X, Y, 0.2, 1.0)
    np.testing.assert_array_equal(X1, X)
    np.testing.assert_array_equal(Y1, Y)


def test_shear_flow_reverses(grid32):
    tg = TimeGrid(0.0, 0.05, 41)
    v = _shear(grid32, tg.nt)
    partition = build_partition(make_step(tau_c=0.5), (0.5, 1.5))
    solver = CharacteristicSolver(v, tg)
    flow = solve_flow(v, tg, 2, partition, solver=solver)
    assert flow.reversibility_defect(solver) < 1e-10


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_random_flows_preserve_volume_and_reverse(seed):
    grid = Grid(128)
    rng = np.random.default_rng(seed)
    tg = TimeGrid(0.0, 0.01, 21)
    A = random_divergence_free(grid, 3, rng)
    B = random_divergence_free(grid, 3, rng)
    A, B = A * (0.5 / A.sup_norm()), B * (0.5 / B.sup_norm())
    v = VectorField.stack([A * np.cos(t) + B * np.sin(t) for t in tg.times])
    partition = build_partition(make_step(tau_c=0.05), (0.05, 0.15))
    solver = CharacteristicSolver(v, tg)
    assert partition.indices
    for i in partition.indices:
        flow = solve_flow(v, tg, i, partition, solver=solver)
        assert flow.max_jacobian_defect() < 1e-6
        assert flow.reversibility_defect(solver) < 1e-7
        assert np.abs(flow.displacement).max() > 0
