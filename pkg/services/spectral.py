"""
Band-limited fields on the 2-torus and the Fourier multipliers acting on them.

Fields store rfft2 coefficients (norm="forward", so the stored value is the
Fourier coefficient f̂(k)) with shape (..., ncomp, n, n//2+1); any leading
axes are time samples. Grid points are x_j = 2πj/n, array axis -1 is x and
axis -2 is y. Every field carries `band`, an upper bound on the |k|_∞ of its
support; products check band_a + band_b < n/2 and are then alias-free.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar, Optional, Sequence, Union

import numpy as np
import scipy.fft as sfft

logger = logging.getLogger(__name__)

DEFAULT_SHELL_WIDTH = 0.25

_workers = 1


def set_fft_workers(workers: int) -> None:
    global _workers
    _workers = max(1, int(workers))


class HeadroomError(ValueError):
    """A product or shell would exceed the representable band."""


@dataclass(frozen=True)
class Grid:
    n: int
    dealias_cutoff: Optional[int] = None

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two >= 8, got {self.n}")
        if self.dealias_cutoff is None:
            object.__setattr__(self, "dealias_cutoff", self.n // 3)
        if 3 * self.dealias_cutoff > self.n:
            raise ValueError(f"dealias cutoff {self.dealias_cutoff} exceeds n/3 for n={self.n}")

    @property
    def max_band(self) -> int:
        return self.n // 2 - 1

    @property
    def dx(self) -> float:
        return 2 * np.pi / self.n

    @cached_property
    def x(self) -> np.ndarray:
        return self.dx * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) with X[iy, ix] = x_ix, Y[iy, ix] = x_iy."""
        return np.meshgrid(self.x, self.x, indexing="xy")

    @cached_property
    def kx(self) -> np.ndarray:
        return np.broadcast_to(sfft.rfftfreq(self.n, 1.0 / self.n)[None, :], self.shape_k)

    @cached_property
    def ky(self) -> np.ndarray:
        return np.broadcast_to(sfft.fftfreq(self.n, 1.0 / self.n)[:, None], self.shape_k)

    @property
    def shape_k(self) -> tuple[int, int]:
        return (self.n, self.n // 2 + 1)

    @cached_property
    def k2(self) -> np.ndarray:
        return self.kx**2 + self.ky**2

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def kinf(self) -> np.ndarray:
        return np.maximum(np.abs(self.kx), np.abs(self.ky))

    @cached_property
    def full_k(self) -> tuple[np.ndarray, np.ndarray]:
        """(kx, ky) on the full fft2 plane, shape (n, n)."""
        freq = sfft.fftfreq(self.n, 1.0 / self.n)
        return np.meshgrid(freq, freq, indexing="xy")

    def band_mask(self, band: int) -> np.ndarray:
        return self.kinf <= band

    # -- transforms --

    def fft(self, data: np.ndarray) -> np.ndarray:
        return sfft.rfft2(data, axes=(-2, -1), norm="forward", workers=_workers)

    def ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.irfft2(coeffs, s=(self.n, self.n), axes=(-2, -1), norm="forward", workers=_workers)

    def full_fft(self, data: np.ndarray) -> np.ndarray:
        return sfft.fft2(data, axes=(-2, -1), norm="forward", workers=_workers)

    def full_ifft(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.ifft2(coeffs, axes=(-2, -1), norm="forward", workers=_workers)


FieldT = Union["ScalarField", "VectorField", "SymTensorField"]


@dataclass(frozen=True, eq=False)
class Field:
    """Common storage of the three field kinds."""

    grid: Grid
    coeffs: np.ndarray
    band: int

    NCOMP: ClassVar[int] = 0

    # keep numpy scalars from broadcasting into fields
    __array_ufunc__ = None

    def __post_init__(self):
        expected = (self.NCOMP,) + self.grid.shape_k
        if self.coeffs.shape[-3:] != expected:
            raise ValueError(
                f"{type(self).__name__} expects coefficient shape (..., {expected}), got {self.coeffs.shape}"
            )
        if self.band > self.grid.max_band:
            raise HeadroomError(f"band {self.band} exceeds n/2-1 = {self.grid.max_band}")

    # -- construction --

    @classmethod
    def from_physical(cls, grid: Grid, data: np.ndarray, band: Optional[int] = None):
        """Transform real samples; modes beyond `band` (default n/2-1) are dropped."""
        data = np.asarray(data, dtype=float)
        if cls.NCOMP == 1:
            data = data[..., None, :, :]
        band = grid.max_band if band is None else int(band)
        coeffs = grid.fft(data) * grid.band_mask(band)
        return cls(grid, coeffs, band)

    @classmethod
    def zeros(cls, grid: Grid, leading: tuple = ()):
        return cls(grid, np.zeros(leading + (cls.NCOMP,) + grid.shape_k, dtype=complex), 0)

    @classmethod
    def stack(cls, fields: Sequence["Field"]):
        """Time series from single-time fields."""
        grid = fields[0].grid
        return cls(grid, np.stack([f.coeffs for f in fields]), max(f.band for f in fields))

    def with_coeffs(self, coeffs: np.ndarray, band: Optional[int] = None):
        return type(self)(self.grid, coeffs, self.band if band is None else band)

    # -- views --

    @cached_property
    def physical(self) -> np.ndarray:
        """Real samples, shape (..., ncomp, n, n)."""
        return self.grid.ifft(self.coeffs)

    @property
    def values(self) -> np.ndarray:
        return self.physical[..., 0, :, :] if self.NCOMP == 1 else self.physical

    @property
    def leading_shape(self) -> tuple:
        return self.coeffs.shape[:-3]

    @property
    def mean(self) -> np.ndarray:
        return self.coeffs[..., 0, 0].real

    def component(self, i: int) -> "ScalarField":
        return ScalarField(self.grid, self.coeffs[..., i : i + 1, :, :], self.band)

    def sample(self, j: int):
        return self.with_coeffs(self.coeffs[j])

    def time_slice(self, start: int, stop: int):
        return self.with_coeffs(self.coeffs[start:stop])

    def scale_time(self, weights: np.ndarray):
        """Multiply sample j of a time series by weights[j]."""
        w = np.asarray(weights, dtype=float)
        return self.with_coeffs(self.coeffs * w[(...,) + (None,) * 3])

    # -- arithmetic --

    def _check_same(self, other: "Field"):
        if type(other) is not type(self) or other.grid != self.grid:
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")

    def __add__(self, other: "Field"):
        self._check_same(other)
        return self.with_coeffs(self.coeffs + other.coeffs, max(self.band, other.band))

    def __sub__(self, other: "Field"):
        self._check_same(other)
        return self.with_coeffs(self.coeffs - other.coeffs, max(self.band, other.band))

    def __neg__(self):
        return self.with_coeffs(-self.coeffs)

    def __mul__(self, scalar: float):
        return self.with_coeffs(self.coeffs * scalar)

    __rmul__ = __mul__

    # -- norms --

    def sup_norm(self) -> float:
        return float(np.abs(self.physical).max()) if self.coeffs.size else 0.0

    def spectral_energy(self) -> float:
        """Σ_k |f̂(k)|² over the full plane (Parseval)."""
        weights = np.where((self.grid.kx == 0) | (self.grid.kx == self.grid.n // 2), 1.0, 2.0)
        return float(np.sum(weights * np.abs(self.coeffs) ** 2))

    def physical_energy(self) -> float:
        return float(np.sum(self.physical**2) / self.grid.n**2)


class ScalarField(Field):
    NCOMP: ClassVar[int] = 1


class VectorField(Field):
    NCOMP: ClassVar[int] = 2

    @classmethod
    def from_components(cls, fx: ScalarField, fy: ScalarField) -> "VectorField":
        coeffs = np.concatenate([fx.coeffs, fy.coeffs], axis=-3)
        return cls(fx.grid, coeffs, max(fx.band, fy.band))

    def divergence_defect(self) -> float:
        """max |k·v̂(k)| relative to max |v̂|."""
        scale = np.abs(self.coeffs).max() if self.coeffs.size else 0.0
        if scale == 0.0:
            return 0.0
        kv = self.grid.kx * self.coeffs[..., 0, :, :] + self.grid.ky * self.coeffs[..., 1, :, :]
        return float(np.abs(kv).max() / (scale * max(self.band, 1)))

    def is_divergence_free(self, tol: float = 1e-12) -> bool:
        return self.divergence_defect() <= tol

    def perp(self) -> "VectorField":
        """v⊥ = (-v_y, v_x)."""
        c = self.coeffs
        return self.with_coeffs(np.stack([-c[..., 1, :, :], c[..., 0, :, :]], axis=-3))


class SymTensorField(Field):
    """Components stored as (xx, xy, yy)."""

    NCOMP: ClassVar[int] = 3

    @classmethod
    def from_components(cls, xx: ScalarField, xy: ScalarField, yy: ScalarField) -> "SymTensorField":
        coeffs = np.concatenate([xx.coeffs, xy.coeffs, yy.coeffs], axis=-3)
        return cls(xx.grid, coeffs, max(xx.band, xy.band, yy.band))

    def matrix(self) -> np.ndarray:
        """Physical samples as (..., 2, 2, n, n)."""
        p = self.physical
        xx, xy, yy = p[..., 0, :, :], p[..., 1, :, :], p[..., 2, :, :]
        return np.stack([np.stack([xx, xy], axis=-3), np.stack([xy, yy], axis=-3)], axis=-4)


# ============ Fourier multipliers ============

def _apply(f: FieldT, multiplier: np.ndarray) -> FieldT:
    return f.with_coeffs(f.coeffs * multiplier)


def lambda_pow(f: FieldT, s: float) -> FieldT:
    """Λ^s f: multiplier |k|^s; the mean is kept for s = 0 and dropped for s > 0."""
    grid = f.grid
    if s < 0:
        mean = np.abs(f.coeffs[..., 0, 0]).max() if f.coeffs.size else 0.0
        scale = max(1.0, float(np.abs(f.coeffs).max())) if f.coeffs.size else 1.0
        if mean > 1e-12 * scale:
            raise ValueError(f"Λ^{s} needs a zero-mean field, mean modulus is {mean:.3e}")
    if s == 0:
        return f.with_coeffs(f.coeffs.copy())
    with np.errstate(divide="ignore"):
        m = np.where(grid.k2 > 0, grid.kabs ** float(s), 0.0)
    return _apply(f, m)


def _d(grid: Grid, axis: str) -> np.ndarray:
    return 1j * (grid.kx if axis == "x" else grid.ky)


def grad(f: ScalarField) -> VectorField:
    c = f.coeffs[..., 0, :, :]
    g = f.grid
    return VectorField(g, np.stack([_d(g, "x") * c, _d(g, "y") * c], axis=-3), f.band)


def grad_perp(f: ScalarField) -> VectorField:
    """∇⊥f = (-∂_y f, ∂_x f)."""
    c = f.coeffs[..., 0, :, :]
    g = f.grid
    return VectorField(g, np.stack([-_d(g, "y") * c, _d(g, "x") * c], axis=-3), f.band)


def div(f: Union[VectorField, SymTensorField]) -> Union[ScalarField, VectorField]:
    """Divergence of a vector (→ scalar) or of a symmetric tensor, row-wise (→ vector)."""
    g = f.grid
    c = f.coeffs
    dx, dy = _d(g, "x"), _d(g, "y")
    if isinstance(f, VectorField):
        out = dx * c[..., 0, :, :] + dy * c[..., 1, :, :]
        return ScalarField(g, out[..., None, :, :], f.band)
    if isinstance(f, SymTensorField):
        xx, xy, yy = c[..., 0, :, :], c[..., 1, :, :], c[..., 2, :, :]
        out = np.stack([dx * xx + dy * xy, dx * xy + dy * yy], axis=-3)
        return VectorField(g, out, f.band)
    raise TypeError(f"div is not defined for {type(f).__name__}")


def curl(v: VectorField) -> ScalarField:
    """∇⊥·v = ∂_x v_y - ∂_y v_x."""
    g = v.grid
    c = v.coeffs
    out = _d(g, "x") * c[..., 1, :, :] - _d(g, "y") * c[..., 0, :, :]
    return ScalarField(g, out[..., None, :, :], v.band)


def laplacian(f: FieldT) -> FieldT:
    return _apply(f, -f.grid.k2)


def leray(v: VectorField) -> VectorField:
    """ℙv = v - k(k·v̂)/|k|²; the mean mode passes through."""
    g = v.grid
    c = v.coeffs
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(g.k2 > 0, 1.0 / g.k2, 0.0)
    kv = (g.kx * c[..., 0, :, :] + g.ky * c[..., 1, :, :]) * inv
    out = np.stack([c[..., 0, :, :] - g.kx * kv, c[..., 1, :, :] - g.ky * kv], axis=-3)
    return VectorField(g, out, v.band)


# ============ Littlewood-Paley projections ============

@dataclass(frozen=True)
class LowPass:
    N: float


@dataclass(frozen=True)
class Shell:
    """Annulus λ/2 <= |ξ| < 2λ."""

    lam: float


@dataclass(frozen=True)
class DirectionalShell:
    """|ξ - λk| <= width·λ together with its mirror around -λk."""

    k: tuple[float, float]
    lam: int
    width: float = DEFAULT_SHELL_WIDTH

    @property
    def outer_radius(self) -> float:
        return self.lam * (float(np.hypot(*self.k)) + self.width)


def directional_mask(grid: Grid, shell: DirectionalShell, full: bool = False) -> np.ndarray:
    """Shell mask; on the rfft half plane both ±λk shells, on the full plane only +λk."""
    kx0, ky0 = float(shell.k[0]) * shell.lam, float(shell.k[1]) * shell.lam
    r2 = (shell.width * shell.lam) ** 2
    if full:
        KX, KY = grid.full_k
        return (KX - kx0) ** 2 + (KY - ky0) ** 2 <= r2
    plus = (grid.kx - kx0) ** 2 + (grid.ky - ky0) ** 2 <= r2
    minus = (grid.kx + kx0) ** 2 + (grid.ky + ky0) ** 2 <= r2
    return plus | minus


def check_shell(grid: Grid, shell: DirectionalShell) -> None:
    if abs(float(np.hypot(*shell.k)) - 1.0) > 1e-14:
        raise ValueError(f"shell direction {shell.k} is not a unit vector")
    if shell.lam < 85:
        raise ValueError(f"shell frequency {shell.lam} is below 85")
    if shell.outer_radius > grid.dealias_cutoff:
        raise HeadroomError(
            f"shell around λ={shell.lam} reaches |ξ|={shell.outer_radius:.1f} "
            f"beyond the dealias cutoff {grid.dealias_cutoff} (n={grid.n})"
        )


def lp_project(f: FieldT, kind: Union[LowPass, Shell, DirectionalShell]) -> FieldT:
    """Sharp Fourier cutoffs; directional shells of vector fields are Leray-projected."""
    g = f.grid
    if isinstance(kind, LowPass):
        return f.with_coeffs(f.coeffs * (g.kabs <= kind.N), min(f.band, int(np.floor(kind.N))))
    if isinstance(kind, Shell):
        mask = (g.kabs >= kind.lam / 2) & (g.kabs < 2 * kind.lam)
        return f.with_coeffs(f.coeffs * mask, min(f.band, int(np.ceil(2 * kind.lam))))
    if isinstance(kind, DirectionalShell):
        check_shell(g, kind)
        out = f.with_coeffs(f.coeffs * directional_mask(g, kind), min(f.band, int(np.ceil(kind.outer_radius))))
        return leray(out) if isinstance(out, VectorField) else out
    raise TypeError(f"unknown projection {kind!r}")


# ============ Anti-divergence ============

def antidiv(f: VectorField) -> SymTensorField:
    """B f = B₀ℙf with (B₀g)^{ij} = -(-Δ)^{-1}(∂_i g^j + ∂_j g^i); div B f = ℙf - mean."""
    g = f.grid
    p = leray(f).coeffs
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(g.k2 > 0, 1.0 / g.k2, 0.0)
    gx, gy = p[..., 0, :, :], p[..., 1, :, :]
    dx, dy = _d(g, "x"), _d(g, "y")
    xx = -2.0 * dx * gx * inv
    xy = -(dx * gy + dy * gx) * inv
    yy = -2.0 * dy * gy * inv
    return SymTensorField(g, np.stack([xx, xy, yy], axis=-3), f.band)


# ============ Products ============

def _product_band(a: Field, b: Field) -> int:
    band = a.band + b.band
    if band > a.grid.max_band:
        raise HeadroomError(
            f"product of bands {a.band} and {b.band} needs {band} > n/2-1 = {a.grid.max_band}"
            f" (n={a.grid.n})"
        )
    return band


def _from_product(cls, grid: Grid, data: np.ndarray, band: int):
    return cls(grid, grid.fft(data) * grid.band_mask(band), band)


def _gradient_physical(w: VectorField) -> np.ndarray:
    """∂_j w_i samples as (..., i, j, n, n)."""
    g = w.grid
    c = w.coeffs
    dx, dy = _d(g, "x"), _d(g, "y")
    spec = np.stack(
        [np.stack([dx * c[..., i, :, :], dy * c[..., i, :, :]], axis=-3) for i in range(2)],
        axis=-4,
    )
    return g.ifft(spec)


def advect(a: VectorField, w: VectorField) -> VectorField:
    """(a·∇)w."""
    band = _product_band(a, w)
    A = a.physical
    G = _gradient_physical(w)
    out = np.einsum("...jxy,...ijxy->...ixy", A, G)
    return _from_product(VectorField, a.grid, out, band)


def transpose_grad_dot(w: VectorField, a: VectorField) -> VectorField:
    """((∇w)^T a)_i = Σ_j ∂_i w_j a_j."""
    band = _product_band(a, w)
    A = a.physical
    G = _gradient_physical(w)
    out = np.einsum("...jxy,...jixy->...ixy", A, G)
    return _from_product(VectorField, a.grid, out, band)


def dot(a: VectorField, b: VectorField) -> ScalarField:
    band = _product_band(a, b)
    out = np.sum(a.physical * b.physical, axis=-3)
    return _from_product(ScalarField, a.grid, out[..., None, :, :], band)


def scalar_times(s: ScalarField, v: Field) -> Field:
    band = _product_band(s, v)
    return _from_product(type(v), v.grid, s.physical * v.physical, band)


def sqg_bracket(v: VectorField, w: VectorField) -> VectorField:
    """Λv·∇w - (∇w)^T Λv."""
    lv = lambda_pow(v, 1.0)
    band = _product_band(lv, w)
    A = lv.physical
    G = _gradient_physical(w)
    out = np.einsum("...jxy,...ijxy->...ixy", A, G) - np.einsum("...jxy,...jixy->...ixy", A, G)
    return _from_product(VectorField, v.grid, out, band)


def sqg_nonlinearity(v: VectorField, w: Optional[VectorField] = None) -> VectorField:
    """N(v) = Λv·∇v - (∇v)^T Λv, or the bracket of v acting on w."""
    return sqg_bracket(v, v if w is None else w)


def sqg_cross(v: VectorField, w: VectorField) -> VectorField:
    """Symmetrized form N(v+w) - N(v) - N(w)."""
    return sqg_bracket(v, w) + sqg_bracket(w, v)


# ============ Norms ============

def sup_norm(f: Field) -> float:
    return f.sup_norm()


def gradient_sup(f: Field) -> float:
    """sup over components of |∂_x f|, |∂_y f|."""
    g = f.grid
    c = f.coeffs
    worst = 0.0
    for d in (_d(g, "x"), _d(g, "y")):
        if c.size:
            worst = max(worst, float(np.abs(g.ifft(d * c)).max()))
    return worst


def c1_norm(f: Field) -> float:
    return f.sup_norm() + gradient_sup(f)


def holder_norm(f: Field, alpha: float) -> float:
    """Littlewood-Paley estimator ‖f‖₀ + sup_j 2^{jα}‖Δ_j f‖_∞.

    Block 0 is 0 < |k| <= 1 and block j is 2^{j-1} < |k| <= 2^j. This is an
    equivalent-norm diagnostic, not the Hölder norm itself.
    """
    if not 0.0 <= alpha <= 2.0:
        raise ValueError(f"alpha must lie in [0, 2], got {alpha}")
    g = f.grid
    best = 0.0
    top = float(g.kabs.max())
    j = 0
    while j == 0 or 2.0 ** (j - 1) < top:
        lower = 0.0 if j == 0 else 2.0 ** (j - 1)
        mask = (g.kabs > lower) & (g.kabs <= 2.0**j)
        if f.coeffs.size and mask.any():
            block = g.ifft(f.coeffs * mask)
            best = max(best, 2.0 ** (j * alpha) * float(np.abs(block).max()))
        j += 1
    return f.sup_norm() + best


def resample(f: FieldT, grid: Grid) -> FieldT:
    """The same band-limited field on another grid."""
    if f.band > grid.max_band:
        raise HeadroomError(f"band {f.band} does not fit on n={grid.n}")
    src, dst = f.grid, grid
    out = np.zeros(f.leading_shape + (f.NCOMP,) + dst.shape_k, dtype=complex)
    b = f.band
    cols = slice(0, b + 1)
    out[..., : b + 1, cols] = f.coeffs[..., : b + 1, cols]
    if b > 0:
        out[..., dst.n - b :, cols] = f.coeffs[..., src.n - b :, cols]
    return type(f)(dst, out, b)


def leray_full(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Leray projection of complex full-plane coefficients shaped (..., 2, n, n)."""
    KX, KY = grid.full_k
    k2 = KX**2 + KY**2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(k2 > 0, 1.0 / k2, 0.0)
    kv = (KX * coeffs[..., 0, :, :] + KY * coeffs[..., 1, :, :]) * inv
    return np.stack([coeffs[..., 0, :, :] - KX * kv, coeffs[..., 1, :, :] - KY * kv], axis=-3)
