"""Tests for Beltrami waves, amplitudes and the perturbation."""

import numpy as np
import pytest
from conftest import make_step

from services.flowtime import TimeGrid, build_partition, solve_flow
from services.geometry import IDENTITY_COEFFICIENTS, OutOfBallError, get_direction_sets, scheme_radius
from services.perturb import (
    WaveSpec,
    amplitudes,
    build_perturbation,
    cancellation_residual,
    frequency_leakage,
    operator_norm,
    phase_field,
    project_piece,
)
from services.spectral import Grid, ScalarField, SymTensorField, VectorField, lambda_pow, leray, sqg_nonlinearity
from services.stress import oscillation_error


@pytest.fixture(scope="module")
def grid512():
    return Grid(512)


def _scaled_stress(R: SymTensorField, size: float) -> SymTensorField:
    flat = np.moveaxis(R.physical, -3, -1)
    return R * (size / operator_norm(flat).max())


# ============ Waves ============

def test_wave_frequency():
    k = get_direction_sets()[(0, 0)].representatives[0]
    wave = WaveSpec(k, 170)
    nx, ny = k.integer_point
    assert wave.frequency == (2 * nx, 2 * ny)
    assert wave.band == max(abs(2 * nx), abs(2 * ny))


@pytest.mark.parametrize("tag", [(0, 0), (1, 1)])
def test_beltrami_wave(grid512, tag):
    k = get_direction_sets()[tag].representatives[1]
    b = WaveSpec(k, 85).real_b(grid512)
    np.testing.assert_allclose(lambda_pow(b, 1.0).physical, 85 * b.physical, atol=1e-10)
    assert b.is_divergence_free()
    N = sqg_nonlinearity(b)
    assert leray(N).sup_norm() < 1e-10 * max(N.sup_norm(), 1.0)


def test_project_piece_keeps_the_wave_and_drops_low_modes(grid512):
    wave = WaveSpec(get_direction_sets()[(0, 0)].representatives[0], 85)
    b = wave.b(grid512)
    np.testing.assert_allclose(project_piece(grid512, b, wave), b, atol=1e-12)
    X, _ = grid512.mesh()
    low = np.stack([np.cos(X), np.sin(X)]).astype(complex)
    assert np.abs(project_piece(grid512, low, wave)).max() < 1e-14


# ============ Amplitudes ============

def test_amplitudes_of_zero_stress(grid32):
    step = make_step()
    amps = amplitudes(SymTensorField.zeros(grid32, (4,)), step)
    assert set(amps.by_tag) == {(0, 0), (0, 1)}
    for tag, fields in amps.by_tag.items():
        for r, a in enumerate(fields):
            expected = np.sqrt(step.delta * float(IDENTITY_COEFFICIENTS[0][r]))
            np.testing.assert_allclose(a.values, expected, rtol=1e-14)
    assert amps.sup_ratio() == pytest.approx(np.sqrt(4633 / 5929), rel=1e-14)


def test_cancellation(grid32, random_tensor):
    step = make_step()
    R = _scaled_stress(random_tensor(grid32, band=4), 0.5 * scheme_radius() * step.lam * step.delta)
    amps = amplitudes(R, step)
    assert cancellation_residual(amps, R) < 1e-11 * step.delta


def test_amplitude_ratio_grows_with_the_stress(grid32, random_tensor):
    step = make_step()
    base = random_tensor(grid32, band=4)
    small = amplitudes(_scaled_stress(base, 0.05 * step.lam * step.delta), step).sup_ratio()
    large = amplitudes(_scaled_stress(base, 0.25 * step.lam * step.delta), step).sup_ratio()
    assert 0 < small < large < 1.5


def test_stress_outside_ball(grid32, random_tensor):
    step = make_step()
    R = _scaled_stress(random_tensor(grid32, band=4), 2 * scheme_radius() * step.lam * step.delta)
    with pytest.raises(OutOfBallError) as info:
        amplitudes(R, step)
    assert info.value.location is not None


def test_explicit_ball_radius(grid32, random_tensor):
    step = make_step()
    R = _scaled_stress(random_tensor(grid32, band=4), 0.2 * step.lam * step.delta)
    amplitudes(R, step, eps=0.3)
    with pytest.raises(OutOfBallError):
        amplitudes(R, step, eps=0.1)


# ============ Perturbation ============

def _still_perturbation(grid, keep_sample=None):
    step = make_step(lam=85, tau_c=0.1)
    timegrid = TimeGrid(0.0, 0.05, 9)
    partition = build_partition(step, (0.1, 0.3))
    v = VectorField.zeros(grid, (timegrid.nt,))
    flows = {i: solve_flow(v, timegrid, i, partition) for i in partition.indices}
    amps = amplitudes(SymTensorField.zeros(grid, (timegrid.nt,)), step)
    return step, partition, amps, build_perturbation(amps, flows, partition, timegrid, grid, keep_sample=keep_sample)


def test_perturbation_without_transport(grid512):
    step, partition, amps, w = _still_perturbation(grid512)
    assert partition.indices == (1, 2, 3)
    sets = get_direction_sets()
    # t = 0.1 is the anchor of slab 1, family (0, 1)
    expected = np.zeros((2, 512, 512))
    for r, k in enumerate(sets[(0, 1)].representatives):
        a = amps.field((0, 1), r).values[2]
        expected += a * 2.0 * WaveSpec(k, 85).b(grid512).real
    np.testing.assert_allclose(w.total.physical[2], expected, atol=1e-12 * np.abs(expected).max())
    assert np.all(w.total.physical[0] == 0.0)


def test_perturbation_is_solenoidal_and_in_its_shells(grid512):
    step, _, _, w = _still_perturbation(grid512)
    assert w.total.is_divergence_free()
    assert frequency_leakage(w.total, step) < 1e-10
    assert w.measured_M > 0
    assert set(w.piece_norms) == {(i, r) for i in (1, 2, 3) for r in range(3)}
    assert w.pieces == {}


def test_kept_pieces_add_up_at_their_sample(grid512):
    _, _, _, w = _still_perturbation(grid512, keep_sample=2)
    assert w.piece_sample == 2
    assert set(w.pieces) == set(w.piece_norms)
    summed = sum(piece.physical for piece in w.pieces.values())
    np.testing.assert_allclose(summed, w.total.physical[2], atol=1e-12)


def test_phase_of_a_shear_flow(grid32):
    timegrid = TimeGrid(0.0, 0.05, 41)
    _, Y = grid32.mesh()
    shear = VectorField.from_physical(grid32, np.stack([np.sin(Y), np.zeros_like(Y)]), band=1)
    partition = build_partition(make_step(tau_c=0.5), (0.5, 1.5))
    flow = solve_flow(VectorField.stack([shear] * timegrid.nt), timegrid, 2, partition)
    wave = WaveSpec(get_direction_sets()[(0, 0)].representatives[0], 85)
    psi = phase_field(flow, wave)
    assert psi.i == 2
    values = psi.values
    assert values.shape == (len(flow.times), 32, 32)
    np.testing.assert_allclose(np.abs(values), 1.0, atol=1e-14)
    np.testing.assert_array_equal(psi.sample(flow.local(20)), 1.0)
    # Φ - x = ((t_i - t) sin y, 0), so ψ = exp(iλ k_x (t_i - t) sin y)
    kx, _ = wave.k.as_array()
    j = flow.local(14)
    expected = np.exp(1j * 85 * kx * (flow.anchor - flow.times[j]) * np.sin(Y))
    np.testing.assert_allclose(psi.sample(j), expected, atol=1e-8)


def test_leakage_of_a_low_mode(grid512):
    X, _ = grid512.mesh()
    f = VectorField.from_physical(grid512, np.stack([np.zeros_like(X), np.cos(X)]))
    assert frequency_leakage(f, make_step()) == pytest.approx(1.0)
    assert frequency_leakage(VectorField.zeros(grid512), make_step()) == 0.0


def test_wave_helpers(grid32):
    wave = WaveSpec(get_direction_sets()[(1, 0)].representatives[2], 85)
    c = wave.c(grid32)
    np.testing.assert_allclose(np.abs(c), 1.0)
    assert isinstance(wave.real_c(Grid(512)), ScalarField)


def _sheared_perturbation(grid, tau_c):
    step = make_step(lam=85, tau_c=tau_c)
    timegrid = TimeGrid(0.0, 0.01, 21)
    _, Y = grid.mesh()
    shear = VectorField.from_physical(grid, np.stack([0.5 * np.sin(Y), np.zeros_like(Y)]), band=1)
    v = VectorField.stack([shear] * timegrid.nt)
    partition = build_partition(step, (0.05, 0.15))
    flows = {i: solve_flow(v, timegrid, i, partition) for i in partition.indices}
    amps = amplitudes(SymTensorField.zeros(grid, (timegrid.nt,)), step)
    return step, flows, build_perturbation(amps, flows, partition, timegrid, grid)


@pytest.mark.parametrize("tau_c", [0.02, 0.05, 0.1])
def test_tau_c_sweep_over_a_steady_shear(grid512, tau_c):
    step, flows, w = _sheared_perturbation(grid512, tau_c)

    assert frequency_leakage(w.total, step) < 1e-10
    assert w.total.is_divergence_free()
    for flow in flows.values():
        assert flow.max_jacobian_defect() < 1e-6
        assert flow.transport_constant(1.0) <= 2.0
    # ‖∇Φ_i - Id‖₀ = 0.5 max|t - t_i|, which grows with the slab width
    deformation = max(flow.deformation(j) for flow in flows.values() for j in range(len(flow.times)))
    assert deformation == pytest.approx(0.5 * (min(tau_c, 0.1) - 0.01), rel=1e-6)


def test_low_oscillation_shrinks_with_tau_c(grid512):
    # on a steady shear the low part of R_osc scales like τ_c
    lows = []
    for tau_c in (0.1, 0.05, 0.025):
        step, _, w = _sheared_perturbation(grid512, tau_c)
        lows.append(oscillation_error(w.total, SymTensorField.zeros(grid512, (21,)), step).low_norm)
    assert lows[0] > 0
    assert lows[1] < 0.75 * lows[0]
    assert lows[2] < 0.75 * lows[1]
