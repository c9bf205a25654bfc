"""Tests for the pseudo-spectral operators."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from services.identities import random_band_limited, random_divergence_free
from services.spectral import (
    DirectionalShell,
    Grid,
    HeadroomError,
    LowPass,
    ScalarField,
    Shell,
    SymTensorField,
    VectorField,
    advect,
    antidiv,
    c1_norm,
    check_shell,
    curl,
    directional_mask,
    div,
    grad,
    grad_perp,
    gradient_sup,
    holder_norm,
    lambda_pow,
    laplacian,
    leray,
    lp_project,
    resample,
    sqg_cross,
    sqg_nonlinearity,
)

TOL = 1e-12


def _scalar(grid, fn):
    X, Y = grid.mesh()
    return ScalarField.from_physical(grid, fn(X, Y))


# ============ Grid and fields ============

@pytest.mark.parametrize("n", [4, 48, 100])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ValueError):
        Grid(n)


def test_grid_cutoff():
    assert Grid(64).dealias_cutoff == 21
    with pytest.raises(ValueError):
        Grid(64, dealias_cutoff=30)


def test_band_above_headroom_rejected(grid32):
    coeffs = np.zeros((2,) + grid32.shape_k, dtype=complex)
    with pytest.raises(HeadroomError):
        VectorField(grid32, coeffs, band=16)


def test_physical_round_trip(grid32, random_vector):
    v = random_vector(grid32)
    again = VectorField.from_physical(grid32, v.physical, band=v.band)
    np.testing.assert_allclose(again.coeffs, v.coeffs, atol=1e-15)


def test_grid_axes(grid32):
    f = _scalar(grid32, lambda X, Y: np.cos(X))
    # axis -1 is x
    np.testing.assert_allclose(f.values[0], np.cos(grid32.x), atol=1e-15)
    assert abs(f.coeffs[0, 0, 1] - 0.5) < 1e-15


def test_numpy_scalar_multiplies_field(grid32, random_scalar):
    f = random_scalar(grid32)
    g = np.float64(2.0) * f
    assert isinstance(g, ScalarField)
    np.testing.assert_allclose(g.coeffs, 2.0 * f.coeffs)


def test_parseval(grid32, random_tensor):
    R = random_tensor(grid32, zero_mean=False)
    assert R.spectral_energy() == pytest.approx(R.physical_energy(), rel=1e-12)


def test_time_series_shapes(grid32, random_scalar):
    samples = [random_scalar(grid32) for _ in range(5)]
    series = ScalarField.stack(samples)
    assert series.leading_shape == (5,)
    np.testing.assert_array_equal(series.sample(3).coeffs, samples[3].coeffs)
    scaled = series.scale_time(np.arange(5.0))
    np.testing.assert_allclose(scaled.sample(2).coeffs, 2.0 * samples[2].coeffs)


def test_combining_kinds_is_a_type_error(grid32, random_scalar, random_vector):
    with pytest.raises(TypeError):
        random_scalar(grid32) + random_vector(grid32)


# ============ Multipliers ============

def test_lambda_of_plane_wave(grid64):
    X, _ = grid64.mesh()
    v = VectorField.from_physical(grid64, np.stack([np.zeros_like(X), -np.sin(5 * X)]))
    np.testing.assert_allclose(lambda_pow(v, 1.0).physical, 5 * v.physical, atol=1e-13)
    np.testing.assert_allclose(lambda_pow(v, 0.5).physical, np.sqrt(5) * v.physical, atol=1e-13)


def test_lambda_inverse(grid32, random_scalar):
    f = random_scalar(grid32)
    back = lambda_pow(lambda_pow(f, 1.0), -1.0)
    np.testing.assert_allclose(back.coeffs, f.coeffs, atol=1e-15)


def test_lambda_negative_power_needs_zero_mean(grid32, random_scalar):
    with pytest.raises(ValueError):
        lambda_pow(random_scalar(grid32, zero_mean=False), -1.0)


def test_curl_of_perp_gradient_is_laplacian(grid32, random_scalar):
    f = random_scalar(grid32)
    np.testing.assert_allclose(curl(grad_perp(f)).coeffs, laplacian(f).coeffs, atol=1e-12)


def test_leray(grid32, random_scalar, random_vector):
    f = random_scalar(grid32)
    g = random_vector(grid32, zero_mean=False)
    assert leray(grad(f)).sup_norm() < TOL * grad(f).sup_norm()
    assert div(leray(g)).sup_norm() < TOL * div(g).sup_norm()
    np.testing.assert_allclose(leray(leray(g)).coeffs, leray(g).coeffs, atol=1e-15)
    np.testing.assert_allclose(leray(g).mean, g.mean)
    assert leray(g).is_divergence_free()


# ============ Anti-divergence ============

def test_antidiv_inverts_divergence(grid32, random_vector):
    g = random_vector(grid32, zero_mean=False)
    expected = leray(g).coeffs.copy()
    expected[..., 0, 0] = 0.0
    np.testing.assert_allclose(div(antidiv(g)).coeffs, expected, atol=1e-14)


def test_antidiv_kills_gradients(grid32, random_scalar):
    f = random_scalar(grid32)
    assert antidiv(grad(f)).sup_norm() < TOL * grad(f).sup_norm()


def test_antidiv_is_trace_free(grid32, random_vector):
    R = antidiv(random_vector(grid32))
    p = R.physical
    assert np.abs(p[0] + p[2]).max() < TOL * np.abs(p).max()
    assert isinstance(R, SymTensorField)


# ============ Projections ============

def test_low_pass(grid32, random_scalar):
    f = random_scalar(grid32, band=10)
    low = lp_project(f, LowPass(3))
    assert low.band == 3
    assert np.all(low.coeffs[..., grid32.kabs > 3] == 0)
    rest = f - low
    assert np.all(rest.coeffs[..., grid32.kabs <= 3] == 0)


def test_shell(grid32, random_scalar):
    f = random_scalar(grid32, band=12)
    shell = lp_project(f, Shell(4))
    kept = (grid32.kabs >= 2) & (grid32.kabs < 8)
    np.testing.assert_array_equal(shell.coeffs[..., ~kept], 0)
    np.testing.assert_array_equal(shell.coeffs[..., kept], f.coeffs[..., kept])


def test_directional_shell_needs_headroom():
    with pytest.raises(HeadroomError):
        check_shell(Grid(64), DirectionalShell((1.0, 0.0), 85))
    with pytest.raises(ValueError):
        check_shell(Grid(1024), DirectionalShell((1.0, 0.0), 40))


def test_directional_projection_of_vectors_is_solenoidal(rng):
    grid = Grid(512)
    g = random_band_limited(grid, VectorField, 120, rng)
    shell = DirectionalShell((36 / 85, 77 / 85), 85)
    out = lp_project(g, shell)
    assert out.is_divergence_free()
    mask = directional_mask(grid, shell)
    np.testing.assert_array_equal(out.coeffs[..., ~mask], 0)


# ============ Products ============

def test_product_headroom(grid32, random_vector):
    a = random_vector(grid32, band=10)
    b = random_vector(grid32, band=10)
    with pytest.raises(HeadroomError):
        advect(a, b)


def test_nonlinearity_of_a_plane_wave_is_a_gradient(grid64):
    X, Y = grid64.mesh()
    phase = 3 * X + 4 * Y
    # k = (3, 4)/5, k⊥ = (-4, 3)/5
    b = VectorField.from_physical(grid64, np.stack([-0.8 * np.sin(phase), 0.6 * np.sin(phase)]), band=5)
    N = sqg_nonlinearity(b)
    assert leray(N).sup_norm() < TOL * max(N.sup_norm(), 1.0)


def test_cross_term(grid32, random_solenoidal):
    v = random_solenoidal(grid32, band=5)
    w = random_solenoidal(grid32, band=5)
    lhs = sqg_nonlinearity(v + w) - sqg_nonlinearity(v) - sqg_nonlinearity(w)
    np.testing.assert_allclose(sqg_cross(v, w).coeffs, lhs.coeffs, atol=1e-12)


def test_nonlinearity_has_zero_mean(grid32, random_solenoidal):
    v = random_solenoidal(grid32, band=6)
    N = sqg_nonlinearity(v)
    assert np.abs(N.mean).max() < TOL * N.sup_norm()


@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_divergence_free_factory(seed):
    grid = Grid(16)
    v = random_divergence_free(grid, 4, np.random.default_rng(seed))
    assert v.divergence_defect() < 1e-14


# ============ Norms ============

def test_gradient_and_c1(grid32):
    f = _scalar(grid32, lambda X, Y: np.sin(4 * X))
    # samples hit the extrema of sin(4x) and 4cos(4x)
    assert gradient_sup(f) == pytest.approx(4.0, rel=1e-12)
    assert c1_norm(f) == pytest.approx(5.0, rel=1e-12)


@pytest.mark.parametrize(
    "freq, alpha, expected",
    [
        (1, 0.5, 2.0),
        (4, 0.5, 3.0),
        (4, 0.0, 2.0),
        (3, 1.0, 5.0),
    ],
)
def test_holder_estimator_blocks(grid32, freq, alpha, expected):
    f = _scalar(grid32, lambda X, Y: np.cos(freq * X))
    assert holder_norm(f, alpha) == pytest.approx(expected, rel=1e-12)


def test_holder_rejects_alpha(grid32, random_scalar):
    with pytest.raises(ValueError):
        holder_norm(random_scalar(grid32), 2.5)


def test_resample(grid32, random_tensor):
    R = random_tensor(grid32, band=5)
    fine = resample(R, Grid(64))
    back = resample(fine, grid32)
    np.testing.assert_allclose(back.coeffs, R.coeffs, atol=1e-15)
    np.testing.assert_allclose(fine.physical[..., ::2, ::2], R.physical, atol=1e-13)
    with pytest.raises(HeadroomError):
        resample(random_tensor(Grid(64), band=20), grid32)
