"""
Time discretization: uniform time grids, the discrete time derivative, the
temporal mollifier, the partition of unity χ_i and the Lagrangian flow maps
Φ_i solved by backward characteristics.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates, spline_filter

from services.params import StepScales
from services.spectral import Field, Grid, VectorField, c1_norm, lambda_pow

logger = logging.getLogger(__name__)

MOLLIFIER_DT_RATIO = 8
DEFAULT_CFL = 0.5
DEFAULT_MAX_SUBSTEPS = 20000
DEFAULT_MODE_LIMIT = 64


class StencilError(ValueError):
    """The series is shorter than the mollifier stencil."""


class CFLError(ValueError):
    """The slab needs more RK4 substeps than allowed."""

    def __init__(self, message: str, required_substeps: int):
        super().__init__(message)
        self.required_substeps = required_substeps


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    dt: float
    nt: int

    def __post_init__(self):
        if self.nt < 3:
            raise ValueError(f"a time grid needs at least 3 samples, got {self.nt}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @classmethod
    def spanning(cls, t0: float, t1: float, nt: int) -> "TimeGrid":
        return cls(t0=t0, dt=(t1 - t0) / (nt - 1), nt=nt)

    @property
    def t1(self) -> float:
        return self.t0 + (self.nt - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    def inside(self, start: float, stop: float) -> np.ndarray:
        """Indices of samples with start < t < stop."""
        t = self.times
        return np.nonzero((t > start) & (t < stop))[0]

    def check_mollification(self, tau: float) -> None:
        if self.dt > tau / MOLLIFIER_DT_RATIO * (1 + 1e-12):
            raise ValueError(
                f"dt={self.dt:.3e} is too coarse for τ={tau:.3e} (needs dt <= τ/{MOLLIFIER_DT_RATIO})"
            )


# ============ Discrete time derivative ============

def time_derivative(series: Field, dt: float) -> Field:
    """Second-order centered differences, second-order one-sided at the ends."""
    if series.leading_shape[0] < 3:
        raise ValueError("time derivative needs at least 3 samples")
    return series.with_coeffs(np.gradient(series.coeffs, dt, axis=0, edge_order=2))


def richardson_ratio(series: Field, dt: float) -> float:
    """Observed ratio ‖D_2h - D_4h‖/‖D_h - D_2h‖ at common interior samples (≈4 for 2nd order).

    NaN when the series is too short or the differences are at round-off level.
    """
    c = series.coeffs
    nt = c.shape[0]
    common = [j for j in range(8, nt - 8) if j % 4 == 0]
    if not common:
        return float("nan")
    d1 = np.gradient(c, dt, axis=0, edge_order=2)
    d2 = np.gradient(c[::2], 2 * dt, axis=0, edge_order=2)
    d4 = np.gradient(c[::4], 4 * dt, axis=0, edge_order=2)
    idx = np.array(common)
    fine = np.abs(d1[idx] - d2[idx // 2]).max()
    coarse = np.abs(d2[idx // 2] - d4[idx // 4]).max()
    scale = np.abs(d1[idx]).max()
    if fine <= 1e-13 * max(scale, 1e-300) or scale == 0.0:
        return float("nan")
    return float(coarse / fine)


# ============ Mollifier ============

def _bump(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def mollifier_weights(tau: float, dt: float) -> np.ndarray:
    """Discrete bump of half-width τ normalized to unit mass."""
    m = int(math.floor(tau / dt + 1e-9))
    if m < 1:
        raise ValueError(f"τ={tau:.3e} is shorter than dt={dt:.3e}")
    w = _bump(np.arange(-m, m + 1) * dt / tau)
    return w / w.sum()


def mollifier_moment(tau: float, dt: float) -> float:
    """Σ|s_j|w_j/τ, the constant of ‖R - R_ℓ‖₀ <= C τ ‖∂_t R‖₀."""
    w = mollifier_weights(tau, dt)
    m = (len(w) - 1) // 2
    return float(np.sum(np.abs(np.arange(-m, m + 1)) * dt * w) / tau)


def mollify_time(series: Field, timegrid: TimeGrid, tau: float) -> Field:
    """Convolve in time with the bump of width τ.

    The series is extended by its first sample before t0 and by its last sample after t1.
    """
    timegrid.check_mollification(tau)
    w = mollifier_weights(tau, timegrid.dt)
    m = (len(w) - 1) // 2
    c = series.coeffs
    nt = c.shape[0]
    if nt < 2 * m + 1:
        raise StencilError(f"series of {nt} samples is shorter than the stencil ({2 * m + 1})")
    padded = np.concatenate(
        [np.repeat(c[:1], m, axis=0), c, np.repeat(c[-1:], m, axis=0)]
    )
    out = np.zeros_like(c)
    for j, weight in enumerate(w[::-1]):
        out += weight * padded[j : j + nt]
    return series.with_coeffs(out)


# ============ Partition of unity ============

def _psi(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s, dtype=float)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s: np.ndarray) -> np.ndarray:
    """η with η(0)=0, η(1)=1, η(s)+η(1-s)=1, flat at both ends."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    a, b = _psi(s), _psi(1.0 - s)
    return a / (a + b)


def smooth_step_derivative(s: np.ndarray) -> np.ndarray:
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    a, b = _psi(s), _psi(1.0 - s)
    with np.errstate(divide="ignore", invalid="ignore"):
        da = np.where(s > 0, a / s**2, 0.0)
        db = np.where(s < 1, b / (1.0 - s) ** 2, 0.0)
    return (da * b + a * db) / (a + b) ** 2


@dataclass(frozen=True)
class TimePartition:
    """χ_i(t) = cos(π/2·η(|t - t_i|/τ_c)) on (t_{i-1}, t_{i+1}); Σχ_i² = 1 between the end anchors."""

    tau_c: float
    indices: tuple
    q_parity: int

    def anchor(self, i: int) -> float:
        return i * self.tau_c

    def slab(self, i: int) -> tuple[float, float]:
        return (i - 1) * self.tau_c, (i + 1) * self.tau_c

    def family_tag(self, i: int) -> tuple[int, int]:
        return self.q_parity, i % 2

    def chi(self, i: int, t) -> np.ndarray:
        s = np.abs((np.asarray(t, dtype=float) - self.anchor(i)) / self.tau_c)
        return np.where(s < 1, np.cos(0.5 * np.pi * smooth_step(s)), 0.0)

    def chi_dt(self, i: int, t) -> np.ndarray:
        r = (np.asarray(t, dtype=float) - self.anchor(i)) / self.tau_c
        s = np.abs(r)
        value = -np.sin(0.5 * np.pi * smooth_step(s)) * 0.5 * np.pi * smooth_step_derivative(s)
        return np.where(s < 1, value * np.sign(r) / self.tau_c, 0.0)

    def sum_squares(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        total = np.zeros_like(t)
        for i in self.indices:
            total = total + self.chi(i, t) ** 2
        return total

    def derivative_constant(self, samples: int = 4001) -> float:
        """Measured sup|∂_tχ_i|·τ_c."""
        if not self.indices:
            return 0.0
        i = self.indices[0]
        t = np.linspace(*self.slab(i), samples)
        return float(np.abs(self.chi_dt(i, t)).max() * self.tau_c)

    @property
    def covered(self) -> Optional[tuple[float, float]]:
        if not self.indices:
            return None
        return self.anchor(self.indices[0]), self.anchor(self.indices[-1])


def build_partition(
    step: StepScales,
    support: Optional[tuple[float, float]],
    tau_c: Optional[float] = None,
) -> TimePartition:
    """
    Partition covering a time support.

    Args:
        step: Scales of the step q -> q+1
        support: (start, stop) of the fields' temporal support, None when they vanish
        tau_c: Override of τ_{c,q+1} (deformation sweeps)

    Returns:
        TimePartition with Σχ_i² = 1 on the support and 0 near t = 0
    """
    tau = step.tau_c if tau_c is None else tau_c
    if tau <= 0:
        raise ValueError(f"τ_c must be positive, got {tau}")
    if support is None:
        return TimePartition(tau_c=tau, indices=(), q_parity=step.parity)
    start, stop = support
    first = math.floor(start / tau)
    last = math.ceil(stop / tau)
    if first < 1:
        logger.warning("support starts at %.3e < τ_c=%.3e; first slab clamped to i=1", start, tau)
        first = 1
    last = max(last, first)
    return TimePartition(tau_c=tau, indices=tuple(range(first, last + 1)), q_parity=step.parity)


# ============ Characteristics ============

class VelocityInterpolant:
    """Λv_q(s, X): cubic Lagrange in time, exact Fourier sum or periodic cubic spline in space."""

    def __init__(self, velocity: VectorField, timegrid: TimeGrid, mode_limit: int = DEFAULT_MODE_LIMIT):
        self.velocity = velocity
        self.timegrid = timegrid
        self.grid = velocity.grid
        self.mode_limit = mode_limit
        self._cache: dict[int, object] = {}

    def _evaluator(self, j: int):
        if j in self._cache:
            return self._cache[j]
        coeffs = self.velocity.coeffs[j]
        grid = self.grid
        scale = np.abs(coeffs).max()
        active = (np.abs(coeffs) > 1e-14 * scale).any(axis=0) if scale > 0 else np.zeros(grid.shape_k, bool)
        count = int(active.sum())
        if count == 0:
            evaluator = ("zero", None)
        elif count <= self.mode_limit:
            weights = np.where(grid.kx[active] == 0, 1.0, 2.0)
            evaluator = ("modes", (grid.kx[active], grid.ky[active], coeffs[:, active] * weights))
        else:
            filtered = [
                spline_filter(self.velocity.physical[j, c], order=3, mode="grid-wrap") for c in range(2)
            ]
            evaluator = ("spline", filtered)
        self._cache[j] = evaluator
        return evaluator

    def _at_sample(self, j: int, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        kind, data = self._evaluator(j)
        if kind == "zero":
            return np.zeros((2,) + X.shape)
        if kind == "modes":
            kx, ky, amp = data
            out = np.empty((2, X.size))
            xf, yf = X.ravel(), Y.ravel()
            chunk = 16384
            for start in range(0, xf.size, chunk):
                phase = np.exp(1j * (np.outer(xf[start : start + chunk], kx) + np.outer(yf[start : start + chunk], ky)))
                out[:, start : start + chunk] = (phase @ amp.T).real.T
            return out.reshape((2,) + X.shape)
        dx = self.grid.dx
        coords = np.stack([Y.ravel() / dx, X.ravel() / dx])
        out = [
            map_coordinates(data[c], coords, order=3, mode="grid-wrap", prefilter=False) for c in range(2)
        ]
        return np.stack(out).reshape((2,) + X.shape)

    def __call__(self, s: float, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        tg = self.timegrid
        r = (s - tg.t0) / tg.dt
        if r <= 0:
            return self._at_sample(0, X, Y)
        if r >= tg.nt - 1:
            return self._at_sample(tg.nt - 1, X, Y)
        base = min(max(int(math.floor(r)) - 1, 0), tg.nt - 4) if tg.nt >= 4 else 0
        nodes = list(range(base, min(base + 4, tg.nt)))
        out = np.zeros((2,) + X.shape)
        for a in nodes:
            weight = 1.0
            for b in nodes:
                if b != a:
                    weight *= (r - b) / (a - b)
            if abs(weight) > 0.0:
                out += weight * self._at_sample(a, X, Y)
        return out


class CharacteristicSolver:
    """RK4 integration of dX/ds = Λv_q(s, X)."""

    def __init__(
        self,
        v_q: VectorField,
        timegrid: TimeGrid,
        cfl: float = DEFAULT_CFL,
        max_substeps: int = DEFAULT_MAX_SUBSTEPS,
        mode_limit: int = DEFAULT_MODE_LIMIT,
    ):
        self.grid = v_q.grid
        self.timegrid = timegrid
        self.cfl = cfl
        self.max_substeps = max_substeps
        self.advecting = lambda_pow(v_q, 1.0)
        self.interpolant = VelocityInterpolant(self.advecting, timegrid, mode_limit)
        self.speed = self.advecting.sup_norm()

    def substeps(self, t_from: float, t_to: float) -> int:
        if self.speed == 0.0 or t_from == t_to:
            return 0
        h_max = self.cfl * self.grid.dx / self.speed
        required = int(math.ceil(abs(t_to - t_from) / h_max))
        if required > self.max_substeps:
            raise CFLError(
                f"integration over {abs(t_to - t_from):.3e} needs {required} RK4 substeps "
                f"(limit {self.max_substeps})",
                required_substeps=required,
            )
        return max(required, 1)

    def integrate(self, X: np.ndarray, Y: np.ndarray, t_from: float, t_to: float) -> tuple[np.ndarray, np.ndarray]:
        steps = self.substeps(t_from, t_to)
        if steps == 0:
            return X.copy(), Y.copy()
        h = (t_to - t_from) / steps
        P = np.stack([X, Y]).astype(float)
        s = t_from
        f = self.interpolant
        for _ in range(steps):
            k1 = f(s, P[0], P[1])
            Q = P + 0.5 * h * k1
            k2 = f(s + 0.5 * h, Q[0], Q[1])
            Q = P + 0.5 * h * k2
            k3 = f(s + 0.5 * h, Q[0], Q[1])
            Q = P + h * k3
            k4 = f(s + h, Q[0], Q[1])
            P = P + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            s += h
        return P[0], P[1]


@dataclass(frozen=True, eq=False)
class FlowMap:
    """Φ_i on the samples of its slab, stored as the unwrapped displacement Φ_i - x."""

    index: int
    anchor: float
    grid: Grid
    sample_indices: np.ndarray
    times: np.ndarray
    displacement: np.ndarray  # (ns, 2, n, n)
    substeps: int

    def local(self, sample: int) -> int:
        """Position of a global time-sample index inside the slab."""
        hits = np.nonzero(self.sample_indices == sample)[0]
        if not hits.size:
            raise KeyError(f"sample {sample} is outside slab {self.index}")
        return int(hits[0])

    def displacement_field(self, j: int) -> VectorField:
        return VectorField.from_physical(self.grid, self.displacement[j])

    def gradient(self, j: int) -> np.ndarray:
        """∇Φ_i at local sample j as (2, 2, n, n), entry [a, b] = ∂_b Φ_a."""
        coeffs = self.grid.fft(self.displacement[j])
        dx, dy = 1j * self.grid.kx, 1j * self.grid.ky
        mask = self.grid.band_mask(self.grid.max_band)
        grad = np.stack(
            [np.stack([self.grid.ifft(dx * coeffs[a] * mask), self.grid.ifft(dy * coeffs[a] * mask)]) for a in range(2)]
        )
        grad[0, 0] += 1.0
        grad[1, 1] += 1.0
        return grad

    def jacobian(self, j: int) -> np.ndarray:
        g = self.gradient(j)
        return g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]

    def deformation(self, j: int) -> float:
        """‖∇Φ_i - Id‖₀ (componentwise)."""
        g = self.gradient(j)
        g[0, 0] -= 1.0
        g[1, 1] -= 1.0
        return float(np.abs(g).max())

    def max_jacobian_defect(self) -> float:
        return max((float(np.abs(self.jacobian(j) - 1.0).max()) for j in range(len(self.times))), default=0.0)

    def transport_constant(self, advecting_c1: float) -> float:
        """max_j ‖∇Φ_i(t_j) - Id‖₀ / (|t_j - t_i|·‖Λv_q‖₁)."""
        worst = 0.0
        for j, t in enumerate(self.times):
            gap = abs(t - self.anchor)
            if gap > 0 and advecting_c1 > 0:
                worst = max(worst, self.deformation(j) / (gap * advecting_c1))
        return worst

    def time_derivative_sup(self) -> float:
        """sup|∂_tΦ_i| by finite differences over the slab samples."""
        if len(self.times) < 3:
            return float("nan")
        dt = float(self.times[1] - self.times[0])
        return float(np.abs(np.gradient(self.displacement, dt, axis=0, edge_order=2)).max())

    def reversibility_defect(self, solver: CharacteristicSolver) -> float:
        """max |Φ_i⁻¹(t, Φ_i(t, x)) - x| over the slab, running characteristics back from the anchor."""
        X0, Y0 = self.grid.mesh()
        worst = 0.0
        for j, t in enumerate(self.times):
            D = self.displacement[j]
            X, Y = solver.integrate(X0 + D[0], Y0 + D[1], self.anchor, float(t))
            worst = max(worst, float(np.abs(X - X0).max()), float(np.abs(Y - Y0).max()))
        return worst


def solve_flow(
    v_q: VectorField,
    timegrid: TimeGrid,
    i: int,
    partition: TimePartition,
    cfl: float = DEFAULT_CFL,
    max_substeps: int = DEFAULT_MAX_SUBSTEPS,
    solver: Optional[CharacteristicSolver] = None,
) -> FlowMap:
    """Φ_i(t, x) = X(t_i) where dX/ds = Λv_q(s, X), X(t) = x, for every slab sample t."""
    grid = v_q.grid
    if solver is None:
        solver = CharacteristicSolver(v_q, timegrid, cfl=cfl, max_substeps=max_substeps)
    anchor = partition.anchor(i)
    samples = timegrid.inside(*partition.slab(i))
    times = timegrid.times[samples]
    X0, Y0 = grid.mesh()
    displacement = np.zeros((len(samples), 2, grid.n, grid.n))
    used = 0
    for j, t in enumerate(times):
        if abs(t - anchor) <= 1e-12 * timegrid.dt:
            continue
        used = max(used, solver.substeps(t, anchor))
        X, Y = solver.integrate(X0, Y0, t, anchor)
        displacement[j, 0] = X - X0
        displacement[j, 1] = Y - Y0
    logger.debug("flow map i=%d: %d samples, up to %d substeps", i, len(samples), used)
    return FlowMap(
        index=i,
        anchor=anchor,
        grid=grid,
        sample_indices=samples,
        times=times,
        displacement=displacement,
        substeps=used,
    )


def advecting_c1(v_q: VectorField) -> float:
    return c1_norm(lambda_pow(v_q, 1.0))
