"""
Beltrami waves, amplitude fields and the perturbation w_{q+1}.

A piece of the perturbation is χ_i a_k b_k(λΦ_i) = χ_i a_k ψ b_k(λx) with
ψ = e^{iλ(Φ_i - x)·k}. Each ±k pair is summed as 2 Re ℙ_{q+1,k}(piece), so
the output is real by construction.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from services.flowtime import FlowMap, TimeGrid, TimePartition
from services.geometry import OutOfBallError, RationalVec, get_direction_sets, get_gamma_solver, scheme_radius
from services.params import StepScales
from services.spectral import (
    DEFAULT_SHELL_WIDTH,
    DirectionalShell,
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    check_shell,
    directional_mask,
    leray_full,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WaveSpec:
    """b_k(λx) = i k⊥ e^{iλk·x} and c_k(λx) = e^{iλk·x} for |k| = 1."""

    k: RationalVec
    lam: int

    @property
    def frequency(self) -> tuple[int, int]:
        nx, ny = self.k.integer_point
        return self.lam * nx // 85, self.lam * ny // 85

    def phase(self, grid: Grid) -> np.ndarray:
        X, Y = grid.mesh()
        fx, fy = self.frequency
        return fx * X + fy * Y

    def c(self, grid: Grid) -> np.ndarray:
        return np.exp(1j * self.phase(grid))

    def b(self, grid: Grid) -> np.ndarray:
        e = self.c(grid)
        px, py = self.k.perp.as_array()
        return np.stack([1j * px * e, 1j * py * e])

    @property
    def band(self) -> int:
        return max(abs(f) for f in self.frequency)

    def real_b(self, grid: Grid) -> VectorField:
        return VectorField.from_physical(grid, self.b(grid).real, band=self.band)

    def real_c(self, grid: Grid) -> ScalarField:
        return ScalarField.from_physical(grid, self.c(grid).real, band=self.band)

    def shell(self, width: float = DEFAULT_SHELL_WIDTH) -> DirectionalShell:
        return DirectionalShell(tuple(self.k.as_array()), self.lam, width)


@dataclass(frozen=True, eq=False)
class AmplitudeField:
    """a_k = δ^{1/2} γ_k(Id - R_ℓ/(λδ)) sampled on the grid, shape (nt, n, n)."""

    k: RationalVec
    tag: tuple[int, int]
    values: np.ndarray
    lam: int
    delta: float

    def sup(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0


@dataclass(frozen=True, eq=False)
class Amplitudes:
    step: StepScales
    by_tag: dict  # tag -> tuple of three AmplitudeField, ordered like the representatives

    def field(self, tag: tuple[int, int], r: int) -> AmplitudeField:
        return self.by_tag[tag][r]

    def sup_ratio(self) -> float:
        """max ‖a_k‖₀ / δ^{1/2}."""
        worst = max(a.sup() for fields in self.by_tag.values() for a in fields)
        return worst / np.sqrt(self.step.delta)


@dataclass(frozen=True, eq=False)
class PhaseField:
    """ψ_{q+1,i,k} = e^{iλ(Φ_i - x)·k} on the slab samples, evaluated one sample at a time."""

    flow: FlowMap
    wave: WaveSpec

    @property
    def i(self) -> int:
        return self.flow.index

    def sample(self, j: int) -> np.ndarray:
        """ψ at local slab sample j, shape (n, n)."""
        kx, ky = self.wave.k.as_array()
        D = self.flow.displacement[j]
        return np.exp(1j * self.wave.lam * (kx * D[0] + ky * D[1]))

    @property
    def values(self) -> np.ndarray:
        return np.stack([self.sample(j) for j in range(len(self.flow.times))])


def phase_field(flow: FlowMap, wave: WaveSpec) -> PhaseField:
    return PhaseField(flow, wave)


def operator_norm(flat: np.ndarray) -> np.ndarray:
    """|eigenvalue|_max of [[a, b], [b, c]] from (..., 3)."""
    a, b, c = flat[..., 0], flat[..., 1], flat[..., 2]
    mid = 0.5 * (a + c)
    rad = np.sqrt((0.5 * (a - c)) ** 2 + b**2)
    return np.abs(mid) + rad


def amplitudes(
    R_ell: SymTensorField,
    step: StepScales,
    eps: Optional[float] = None,
) -> Amplitudes:
    """
    Amplitudes of both slab parities of the family used at this step.

    Args:
        R_ell: Mollified stress time series
        step: Scales of the step q -> q+1
        eps: Ball radius for R_ℓ/(λδ); defaults to the smallest certified radius

    Returns:
        Amplitudes keyed by family tag
    """
    eps = scheme_radius() if eps is None else eps
    scale = step.lam * step.delta
    stress = np.moveaxis(R_ell.physical, -3, -1) / scale  # (..., n, n, 3)
    size = operator_norm(stress)
    if size.size and size.max() > eps:
        worst = np.unravel_index(np.argmax(size), size.shape)
        raise OutOfBallError(
            f"‖R_ℓ/(λδ)‖ = {size.max():.3e} exceeds ε = {eps:.3e} at {tuple(int(i) for i in worst)}",
            coefficients=stress[worst],
            location=tuple(int(i) for i in worst),
        )
    argument = np.empty_like(stress)
    argument[..., 0] = 1.0 - stress[..., 0]
    argument[..., 1] = -stress[..., 1]
    argument[..., 2] = 1.0 - stress[..., 2]

    sets = get_direction_sets()
    by_tag = {}
    for j in (0, 1):
        tag = (step.parity, j)
        gam = get_gamma_solver(tag).gamma(argument)
        by_tag[tag] = tuple(
            AmplitudeField(k, tag, np.sqrt(step.delta) * gam[..., r], step.lam, step.delta)
            for r, k in enumerate(sets[tag].representatives)
        )
    result = Amplitudes(step=step, by_tag=by_tag)
    logger.info("amplitudes at λ=%d: max ‖a_k‖₀/δ^{1/2} = %.4f", step.lam, result.sup_ratio())
    return result


def cancellation_residual(amps: Amplitudes, R_ell: SymTensorField) -> float:
    """sup ‖R_ℓ/λ + ½Σ_k a_k²(k⊥⊗k⊥) - δ Id‖ over both slab parities."""
    step = amps.step
    stress = np.moveaxis(R_ell.physical, -3, -1) / step.lam
    identity = np.array([1.0, 0.0, 1.0]) * step.delta
    worst = 0.0
    for tag, fields in amps.by_tag.items():
        squares = np.stack([a.values**2 for a in fields], axis=-1)
        recon = get_gamma_solver(tag).reconstruct(squares)
        worst = max(worst, float(np.abs(stress + recon - identity).max()))
    return worst


# ============ Perturbation ============

def project_piece(grid: Grid, piece: np.ndarray, wave: WaveSpec, width: float = DEFAULT_SHELL_WIDTH) -> np.ndarray:
    """ℙ_{q+1,k} of a complex vector sample (2, n, n), returned in physical space."""
    shell = wave.shell(width)
    coeffs = grid.full_fft(piece) * directional_mask(grid, shell, full=True)
    return grid.full_ifft(leray_full(coeffs, grid))


@dataclass(frozen=True, eq=False)
class Perturbation:
    total: VectorField
    step: StepScales
    width: float
    piece_norms: dict = field(default_factory=dict)      # (i, r) -> sup|w̃| (unprojected)
    chi_sup: dict = field(default_factory=dict)          # (i, r) -> sup χ_i·‖a_k‖₀
    pieces: dict = field(default_factory=dict)           # (i, r) -> VectorField at piece_sample, only on request
    piece_sample: Optional[int] = None

    @property
    def measured_M(self) -> float:
        """‖w‖₀ / δ^{1/2}."""
        return self.total.sup_norm() / np.sqrt(self.step.delta)


def build_perturbation(
    amps: Amplitudes,
    flows: dict,
    partition: TimePartition,
    timegrid: TimeGrid,
    grid: Grid,
    width: float = DEFAULT_SHELL_WIDTH,
    keep_sample: Optional[int] = None,
) -> Perturbation:
    """w_{q+1} = Σ_i Σ_k ℙ_{q+1,k}(χ_i a_k ψ b_k(λx)), pairs ±k summed as 2 Re.

    With keep_sample set, every projected pair is also kept at that time sample.
    """
    step = amps.step
    sets = get_direction_sets()
    total = np.zeros((timegrid.nt, 2, grid.n, grid.n))
    piece_norms, chi_sup, pieces = {}, {}, {}
    band = 0

    for i in partition.indices:
        flow: FlowMap = flows[i]
        tag = partition.family_tag(i)
        chi = partition.chi(i, flow.times)
        for r, k in enumerate(sets[tag].representatives):
            wave = WaveSpec(k, step.lam)
            check_shell(grid, wave.shell(width))
            shell_band = int(np.ceil(wave.shell(width).outer_radius))
            band = max(band, shell_band)
            b = wave.b(grid)
            psi = phase_field(flow, wave)
            amp = amps.field(tag, r).values
            contribution = None if keep_sample is None else np.zeros((2, grid.n, grid.n))
            raw_sup = 0.0
            for j, g in enumerate(flow.sample_indices):
                if chi[j] == 0.0:
                    continue
                piece = chi[j] * amp[g] * psi.sample(j) * b
                raw_sup = max(raw_sup, float(np.sqrt(np.abs(piece[0]) ** 2 + np.abs(piece[1]) ** 2).max()))
                pair = 2.0 * project_piece(grid, piece, wave, width).real
                total[g] += pair
                if g == keep_sample:
                    contribution = pair
            piece_norms[(i, r)] = raw_sup
            chi_sup[(i, r)] = float(chi.max(initial=0.0)) * amps.field(tag, r).sup()
            if keep_sample is not None:
                pieces[(i, r)] = VectorField.from_physical(grid, contribution, band=shell_band)

    w = VectorField.from_physical(grid, total, band=min(max(band, 0), grid.max_band))
    result = Perturbation(
        total=w, step=step, width=width, piece_norms=piece_norms, chi_sup=chi_sup, pieces=pieces, piece_sample=keep_sample
    )
    if partition.indices:
        logger.info("perturbation at λ=%d over %d slabs: measured M = %.4f", step.lam, len(partition.indices), result.measured_M)
    return result


def shell_union_mask(grid: Grid, step: StepScales, width: float = DEFAULT_SHELL_WIDTH, family: Optional[int] = None) -> np.ndarray:
    """Union of the ±λk shells over Ω^{family}_0 ∪ Ω^{family}_1 (rfft layout)."""
    family = step.parity if family is None else family
    sets = get_direction_sets()
    mask = np.zeros(grid.shape_k, dtype=bool)
    for j in (0, 1):
        for k in sets[(family, j)].representatives:
            mask |= directional_mask(grid, WaveSpec(k, step.lam).shell(width))
    return mask


def frequency_leakage(w: VectorField, step: StepScales, width: float = DEFAULT_SHELL_WIDTH) -> float:
    """Fraction of spectral energy of w outside its parity's shells."""
    total = w.spectral_energy()
    if total == 0.0:
        return 0.0
    outside = w.with_coeffs(w.coeffs * ~shell_union_mask(w.grid, step, width))
    return outside.spectral_energy() / total
