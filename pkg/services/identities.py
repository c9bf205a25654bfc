"""
Machine-precision identity suite over random band-limited fields.

Every check reports a relative residual; the suite passes when each one is
below IDENTITY_TOLERANCE. The identities hold exactly for band-limited
inputs, so the outcome does not depend on the seed.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from services.geometry import scheme_radius
from services.params import StepScales
from services.perturb import amplitudes, cancellation_residual, operator_norm
from services.spectral import (
    Field,
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    antidiv,
    curl,
    div,
    dot,
    grad,
    lambda_pow,
    leray,
    scalar_times,
    sqg_bracket,
    sqg_nonlinearity,
    transpose_grad_dot,
)

logger = logging.getLogger(__name__)

IDENTITY_TOLERANCE = 1e-11


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual < self.tolerance


def random_band_limited(grid: Grid, cls: type, band: int, rng: np.random.Generator, zero_mean: bool = True) -> Field:
    """Real random field of the given kind with modes |k|∞ <= band."""
    shape = (cls.NCOMP, grid.n, grid.n)
    data = rng.standard_normal(shape)
    if cls is ScalarField:
        data = data[0]
    f = cls.from_physical(grid, data, band=band)
    if zero_mean:
        coeffs = f.coeffs.copy()
        coeffs[..., 0, 0] = 0.0
        f = f.with_coeffs(coeffs)
    return f


def random_divergence_free(grid: Grid, band: int, rng: np.random.Generator) -> VectorField:
    return leray(random_band_limited(grid, VectorField, band, rng))


def _relative(residual: Field, scale: Field) -> float:
    size = scale.sup_norm()
    return residual.sup_norm() / size if size > 0 else residual.sup_norm()


def _without_mean(f: Field) -> Field:
    coeffs = f.coeffs.copy()
    coeffs[..., 0, 0] = 0.0
    return f.with_coeffs(coeffs)


def operator_checks(grid: Grid, rng: np.random.Generator, band: Optional[int] = None) -> list[IdentityCheck]:
    """One draw of every operator identity."""
    band = band or max(1, grid.max_band // 2 - 1)
    f = random_band_limited(grid, ScalarField, band, rng)
    g = random_band_limited(grid, VectorField, band, rng, zero_mean=False)
    v = random_divergence_free(grid, band, rng)
    w = random_divergence_free(grid, band, rng)
    lv = lambda_pow(v, 1.0)

    checks = [
        IdentityCheck("leray_of_gradient", _relative(leray(grad(f)), grad(f)), IDENTITY_TOLERANCE),
        IdentityCheck("antidiv_of_gradient", _relative(antidiv(grad(f)), grad(f)), IDENTITY_TOLERANCE),
        IdentityCheck(
            "div_antidiv",
            _relative(div(antidiv(g)) - _without_mean(leray(g)), g),
            IDENTITY_TOLERANCE,
        ),
        IdentityCheck("antidiv_ignores_gradients", _relative(antidiv(g) - antidiv(leray(g)), antidiv(g)), IDENTITY_TOLERANCE),
        IdentityCheck("leray_idempotent", _relative(leray(leray(g)) - leray(g), g), IDENTITY_TOLERANCE),
        IdentityCheck("leray_divergence_free", _relative(div(leray(g)), div(g)), IDENTITY_TOLERANCE),
        IdentityCheck(
            "gradient_of_product",
            _relative(transpose_grad_dot(w, lv) + transpose_grad_dot(lv, w) - grad(dot(w, lv)), grad(dot(w, lv))),
            IDENTITY_TOLERANCE,
        ),
        IdentityCheck(
            "bracket_scalar_form",
            _relative(sqg_bracket(w, v) - scalar_times(curl(v), lambda_pow(w, 1.0).perp()), sqg_bracket(w, v)),
            IDENTITY_TOLERANCE,
        ),
    ]
    nonlinear = sqg_nonlinearity(v)
    size = nonlinear.sup_norm()
    checks.append(
        IdentityCheck("nonlinearity_mean_zero", float(np.abs(nonlinear.mean).max()) / size if size else 0.0, IDENTITY_TOLERANCE)
    )
    return checks


def cancellation_check(grid: Grid, rng: np.random.Generator, lam: int = 85, beta: float = 0.8) -> IdentityCheck:
    """Amplitudes of a random admissible stress cancel it exactly (relative to δ)."""
    delta = float(lam) ** (-2 * beta)
    step = StepScales(q=0, lam=lam, delta=delta, lam_low=lam, tau_m=1.0, tau_c=1.0, lam_next=2 * lam, delta_next=delta)
    stress = random_band_limited(grid, SymTensorField, max(1, grid.max_band // 4), rng)
    size = float(operator_norm(np.moveaxis(stress.physical, -3, -1)).max())
    scale = 0.5 * scheme_radius() * lam * delta / size
    R_ell = stress * scale
    residual = cancellation_residual(amplitudes(R_ell, step), R_ell)
    return IdentityCheck("stress_cancellation", residual / delta, IDENTITY_TOLERANCE)


def run_identity_suite(n: int, seed: int, samples: int = 10) -> list[IdentityCheck]:
    """Worst residual of each identity over `samples` independent draws."""
    grid = Grid(n)
    rng = np.random.default_rng(seed)
    worst: dict[str, IdentityCheck] = {}
    for _ in range(samples):
        for check in operator_checks(grid, rng) + [cancellation_check(grid, rng)]:
            if check.name not in worst or check.residual > worst[check.name].residual:
                worst[check.name] = check
    checks = list(worst.values())
    failed = [c.name for c in checks if not c.passed]
    if failed:
        logger.warning("identity suite (n=%d, seed=%d): failed %s", n, seed, failed)
    else:
        logger.info("identity suite (n=%d, seed=%d): %d identities hold", n, seed, len(checks))
    return checks
