"""
The new Reynolds stress R_{q+1} = (R_q - R_ℓ) + R_osc + R_tran + R_Nash.

Every component goes through B = B₀ℙ, so gradients (pressures) drop out and
each defining relation div R_• = ℙ(bracket) holds up to the mean.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from services.flowtime import TimeGrid, richardson_ratio, time_derivative
from services.params import StepScales
from services.perturb import WaveSpec, project_piece
from services.spectral import (
    DEFAULT_SHELL_WIDTH,
    Grid,
    SymTensorField,
    VectorField,
    advect,
    antidiv,
    curl,
    div,
    gradient_sup,
    lambda_pow,
    scalar_times,
    sqg_bracket,
    sqg_cross,
    sqg_nonlinearity,
    transpose_grad_dot,
)

logger = logging.getLogger(__name__)

RICHARDSON_RANGE = (3.0, 5.0)
COMPONENTS = ("mollification", "oscillation", "transport", "nash")


def _check_richardson(name: str, series, dt: float) -> float:
    ratio = richardson_ratio(series, dt)
    if not math.isnan(ratio) and not RICHARDSON_RANGE[0] <= ratio <= RICHARDSON_RANGE[1]:
        logger.warning("%s: Richardson ratio %.2f outside [3, 5], time resolution insufficient", name, ratio)
    return ratio


# ============ Transport ============

def material_derivative(w: VectorField, v_q: VectorField, dt: float) -> VectorField:
    """D_t w = ∂_t w + Λv_q·∇w."""
    return time_derivative(w, dt) + advect(lambda_pow(v_q, 1.0), w)


def transport_error(w: VectorField, v_q: VectorField, timegrid: TimeGrid) -> SymTensorField:
    """R_tran = B(D_t w)."""
    _check_richardson("transport", w, timegrid.dt)
    return antidiv(material_derivative(w, v_q, timegrid.dt))


def transport_gain(R_tran: SymTensorField, w: VectorField, v_q: VectorField, step: StepScales, dt: float) -> float:
    """Measured C in ‖R_tran‖₀ <= C λ_{q+1}^{-1}‖D_t w‖₀."""
    rate = material_derivative(w, v_q, dt).sup_norm() / step.lam
    return R_tran.sup_norm() / rate if rate > 0 else 0.0


# ============ Nash ============

def nash_bracket(w: VectorField, v_q: VectorField) -> VectorField:
    """Λw·∇v_q - (∇v_q)^T Λw + (∇Λv_q)^T w."""
    return sqg_bracket(w, v_q) + transpose_grad_dot(lambda_pow(v_q, 1.0), w)


def nash_error(w: VectorField, v_q: VectorField) -> SymTensorField:
    return antidiv(nash_bracket(w, v_q))


def nash_scalar_defect(w: VectorField, v_q: VectorField) -> float:
    """‖B(Λw·∇v_q - (∇v_q)^T Λw) - B((Λw)⊥(∇⊥·v_q))‖₀."""
    vector_form = antidiv(sqg_bracket(w, v_q))
    scalar_form = antidiv(scalar_times(curl(v_q), lambda_pow(w, 1.0).perp()))
    return (vector_form - scalar_form).sup_norm()


def cross_split_defect(w: VectorField, v_q: VectorField) -> float:
    """‖B(N(v_q+w) - N(v_q) - N(w)) - B(Λv_q·∇w) - R_Nash‖₀ relative to the cross term; gradients drop under B."""
    cross = antidiv(sqg_cross(v_q, w))
    size = cross.sup_norm()
    if size == 0.0:
        return 0.0
    split = antidiv(advect(lambda_pow(v_q, 1.0), w)) + nash_error(w, v_q)
    return (cross - split).sup_norm() / size


# ============ Oscillation ============

@dataclass(frozen=True, eq=False)
class OscillationResult:
    stress: SymTensorField
    low: SymTensorField
    high: SymTensorField
    split_radius: float
    low_bound: float  # λ_q δ_{q+1}

    @property
    def low_norm(self) -> float:
        return self.low.sup_norm()

    @property
    def high_norm(self) -> float:
        return self.high.sup_norm()


def oscillation_bracket(w: VectorField, R_ell: SymTensorField) -> VectorField:
    return div(R_ell) + sqg_nonlinearity(w)


def oscillation_error(
    w: VectorField,
    R_ell: SymTensorField,
    step: StepScales,
    width: float = DEFAULT_SHELL_WIDTH,
) -> OscillationResult:
    """R_osc = Bℙ[div R_ℓ + N(w)], split at |ξ| = width·λ_{q+1} for the diagnostic."""
    bracket = oscillation_bracket(w, R_ell)
    grid = w.grid
    split = width * step.lam
    low_mask = grid.kabs < split
    low = antidiv(bracket.with_coeffs(bracket.coeffs * low_mask))
    high = antidiv(bracket.with_coeffs(bracket.coeffs * ~low_mask))
    stress = antidiv(bracket)
    return OscillationResult(
        stress=stress,
        low=low,
        high=high,
        split_radius=split,
        low_bound=step.lam_low * step.delta,
    )


# ============ Commutator diagnostic ============

def _advect_complex(grid: Grid, velocity: np.ndarray, u: np.ndarray) -> np.ndarray:
    KX, KY = grid.full_k
    spec = grid.full_fft(u)
    ux = grid.full_ifft(1j * KX * spec)
    uy = grid.full_ifft(1j * KY * spec)
    return velocity[0] * ux + velocity[1] * uy


def commutator_norm(
    grid: Grid,
    piece: np.ndarray,
    wave: WaveSpec,
    advecting: np.ndarray,
    width: float = DEFAULT_SHELL_WIDTH,
) -> float:
    """‖Λv_q·∇(ℙ_{q+1,k}w̃) - ℙ_{q+1,k}(Λv_q·∇w̃)‖₀ for one complex sample (∂_t commutes with ℙ_{q+1,k})."""
    projected = project_piece(grid, piece, wave, width)
    lhs = _advect_complex(grid, advecting, projected)
    rhs = project_piece(grid, _advect_complex(grid, advecting, piece), wave, width)
    return float(np.abs(lhs - rhs).max())


# ============ Assembly ============

@dataclass(frozen=True)
class NormRow:
    component: str
    norm: str
    value: float
    threshold: float
    passed: bool


@dataclass(frozen=True, eq=False)
class StressBreakdown:
    components: dict  # name -> SymTensorField
    total: SymTensorField
    rows: tuple
    richardson: dict
    oscillation_low: float = 0.0
    oscillation_low_bound: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(r.passed for r in self.rows)

    def row(self, component: str, norm: str) -> NormRow:
        return next(r for r in self.rows if r.component == component and r.norm == norm)


def _norm_rows(name: str, f: SymTensorField, step: StepScales, eps: float, dt: float) -> tuple[list[NormRow], float]:
    bound = step.stress_bound
    sup = f.sup_norm()
    c1 = gradient_sup(f) / step.lam
    dt_series = time_derivative(f, dt)
    dt_sup = dt_series.sup_norm()
    ratio = richardson_ratio(f, dt)
    space = eps * bound
    time = bound / step.tau_m
    rows = [
        NormRow(name, "sup", sup, space, sup <= space),
        NormRow(name, "c1_scaled", c1, space, c1 <= space),
        NormRow(name, "sup_plus_c1", sup + c1, space, sup + c1 <= space),
        NormRow(name, "dt_sup", dt_sup, time, dt_sup <= time),
    ]
    return rows, ratio


def assemble(
    R_q: SymTensorField,
    R_ell: SymTensorField,
    components: dict,
    step: StepScales,
    eps: float,
    dt: float,
    oscillation: Optional[OscillationResult] = None,
) -> tuple[SymTensorField, StressBreakdown]:
    """
    Sum the new stress and tabulate its norms.

    Args:
        R_q: Current stress
        R_ell: Its mollification
        components: {"oscillation", "transport", "nash"} tensors
        step: Scales of the step q -> q+1
        eps: Prefactor of the stress flag ε λ_{q+2}δ_{q+2}
        dt: Time step of the series

    Returns:
        (R_{q+1}, StressBreakdown); flags are reported, not enforced
    """
    parts = {"mollification": R_q - R_ell}
    for name in COMPONENTS[1:]:
        parts[name] = components[name]
    total = parts["mollification"] + parts["oscillation"] + parts["transport"] + parts["nash"]

    rows, richardson = [], {}
    for name in COMPONENTS:
        r, ratio = _norm_rows(name, parts[name], step, eps, dt)
        rows.extend(r)
        richardson[name] = ratio
    r, ratio = _norm_rows("total", total, step, eps, dt)
    rows.extend(r)
    richardson["total"] = ratio

    failed = [f"{r.component}/{r.norm}" for r in rows if not r.passed]
    if failed:
        logger.warning("stress flags above threshold at q=%d: %s", step.q, ", ".join(failed))
    breakdown = StressBreakdown(
        components=parts,
        total=total,
        rows=tuple(rows),
        richardson=richardson,
        oscillation_low=oscillation.low_norm if oscillation is not None else 0.0,
        oscillation_low_bound=oscillation.low_bound if oscillation is not None else 0.0,
    )
    return total, breakdown
