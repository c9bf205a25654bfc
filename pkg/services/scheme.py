"""
The alternating iteration: two momentum-form SQG systems share a force F;
the active one carries the stress R. A step perturbs the active velocity to
cancel R, and the role swap moves the new stress into F.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Optional, Union

import numpy as np

from services.flowtime import (
    CharacteristicSolver,
    TimeGrid,
    advecting_c1,
    build_partition,
    mollify_time,
    solve_flow,
    time_derivative,
)
from services.geometry import get_direction_sets, scheme_radius
from services.params import ParameterTable, StepScales
from services.perturb import (
    WaveSpec,
    amplitudes,
    build_perturbation,
    cancellation_residual,
    frequency_leakage,
    operator_norm,
    phase_field,
    shell_union_mask,
)
from services.spectral import (
    DEFAULT_SHELL_WIDTH,
    Grid,
    ScalarField,
    SymTensorField,
    VectorField,
    antidiv,
    c1_norm,
    curl,
    div,
    dot,
    grad,
    grad_perp,
    gradient_sup,
    lambda_pow,
    leray,
    resample,
    sqg_nonlinearity,
)
from services.stress import (
    assemble,
    commutator_norm,
    cross_split_defect,
    nash_error,
    nash_scalar_defect,
    oscillation_error,
    transport_error,
    transport_gain,
)

logger = logging.getLogger(__name__)

ZETA_SAFETY = 0.9
_PROFILE_SAMPLES = 4001


class InitialDataError(ValueError):
    """The initial flow violates a precondition of the construction."""


class Role(Enum):
    V_ACTIVE = "v_active"
    U_ACTIVE = "u_active"

    def flipped(self) -> "Role":
        return Role.U_ACTIVE if self is Role.V_ACTIVE else Role.V_ACTIVE


# ============ Initial flow ============

@dataclass(frozen=True)
class TimeProfile:
    """φ(t) = exp(1 - 1/(1 - s²)), s = 2(t - center)/duration: peak 1, support (onset, onset + duration)."""

    onset: float
    duration: float

    def _s(self, t):
        return 2.0 * (np.asarray(t, dtype=float) - self.onset) / self.duration - 1.0

    def __call__(self, t) -> np.ndarray:
        s = self._s(t)
        out = np.zeros_like(s)
        inside = np.abs(s) < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out

    def derivative(self, t) -> np.ndarray:
        s = self._s(t)
        out = np.zeros_like(s)
        inside = np.abs(s) < 1
        si = s[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2)
        return out * 2.0 / self.duration

    def second_derivative(self, t) -> np.ndarray:
        s = self._s(t)
        out = np.zeros_like(s)
        inside = np.abs(s) < 1
        si = s[inside]
        g1 = -2.0 * si / (1.0 - si**2) ** 2
        g2 = -2.0 * (1.0 + 3.0 * si**2) / (1.0 - si**2) ** 3
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - si**2)) * (g1**2 + g2)
        return out * (2.0 / self.duration) ** 2

    def steepest_rise(self) -> float:
        """Time of the largest φ' on the rising half."""
        t = np.linspace(self.onset, self.onset + 0.5 * self.duration, _PROFILE_SAMPLES)
        return float(t[np.argmax(self.derivative(t))])


@dataclass(frozen=True, eq=False)
class InitialFlow:
    """V(t, x) = φ(t) S(x) with S divergence-free and supported on |k| <= 1."""

    shape: VectorField
    profile: TimeProfile

    def check(self) -> None:
        S = self.shape
        if S.leading_shape:
            raise InitialDataError("shape: expected a single-time field")
        if not S.is_divergence_free():
            raise InitialDataError("divergence_free: S has a nonzero divergence")
        scale = max(float(np.abs(S.coeffs).max()), 1e-300)
        if np.abs(S.mean).max() > 1e-14 * scale:
            raise InitialDataError("mean_zero: S has a nonzero mean")
        if np.abs(S.coeffs * (S.grid.kabs > 1.0)).max() > 1e-14 * scale:
            raise InitialDataError("low_pass: S has modes with |k| > 1")
        if self.profile.onset <= 1.0:
            raise InitialDataError(f"time_support: onset {self.profile.onset} must exceed 1")

    def sample(self, timegrid: TimeGrid, zeta: float = 1.0) -> VectorField:
        """V^ζ(t) = ζ φ(ζt) S on the grid times."""
        weights = zeta * self.profile(zeta * timegrid.times)
        series = VectorField(self.shape.grid, np.repeat(self.shape.coeffs[None], timegrid.nt, axis=0), 1)
        return series.scale_time(weights)

    def rescaled_onset(self, zeta: float) -> float:
        return self.profile.onset / zeta


def beltrami_initial_flow(grid: Grid, profile: TimeProfile, seed: int = 0, single_mode: bool = False) -> InitialFlow:
    """S = Re Σ α_k i k⊥ e^{ik·x} over k = (1,0), (0,1) with seeded complex α_k."""
    rng = np.random.default_rng(seed)
    X, Y = grid.mesh()
    data = np.zeros((2, grid.n, grid.n))
    modes = [(1, 0)] if single_mode else [(1, 0), (0, 1)]
    for kx, ky in modes:
        alpha = 1.0 if single_mode else complex(rng.normal(), rng.normal()) / math.sqrt(2 * len(modes))
        e = alpha * np.exp(1j * (kx * X + ky * Y))
        data[0] += (1j * (-ky) * e).real
        data[1] += (1j * kx * e).real
    return InitialFlow(VectorField.from_physical(grid, data, band=1), profile)


# ============ State ============

@dataclass(frozen=True)
class SchemeSettings:
    eps: Optional[float] = None
    M: float = 1.0
    width: float = DEFAULT_SHELL_WIDTH
    cfl: float = 0.5
    max_substeps: int = 20000
    mode_limit: int = 64
    tau_c_scale: float = 1.0
    keep_pieces: bool = False
    piece_sample: Optional[int] = None  # defaults to nt // 2
    diagnostics: bool = True

    @property
    def radius(self) -> float:
        return scheme_radius() if self.eps is None else self.eps


@dataclass(frozen=True, eq=False)
class SystemState:
    q: int
    u: VectorField
    v: VectorField
    R: SymTensorField
    force_terms: tuple  # F = F_0 + absorbed stresses, summed in order
    active_role: Role
    table: ParameterTable
    timegrid: TimeGrid
    zeta: float = 1.0

    @cached_property
    def F(self) -> SymTensorField:
        total = self.force_terms[0]
        for term in self.force_terms[1:]:
            total = total + term
        return total

    @property
    def grid(self) -> Grid:
        return self.v.grid

    @property
    def active(self) -> VectorField:
        return self.v if self.active_role is Role.V_ACTIVE else self.u

    @property
    def inactive(self) -> VectorField:
        return self.u if self.active_role is Role.V_ACTIVE else self.v

    def with_active(self, field_: VectorField, **changes) -> "SystemState":
        key = "v" if self.active_role is Role.V_ACTIVE else "u"
        return replace(self, **{key: field_}, **changes)


# ============ Initialization ============

@dataclass(frozen=True)
class BaseNorms:
    """Norms of the ζ = 1 data; they scale as ζ, ζ² and ζ³."""

    velocity: float        # ‖V‖₁ + ‖ΛV‖₀
    stress: float          # ‖R₀‖_op + λ_1^{-1}‖∇R₀‖₀
    stress_rate: float     # ‖∂_t R₀‖_op
    velocity_bound: float
    stress_bound: float
    stress_rate_bound: float

    def admissible(self, zeta: float) -> bool:
        return (
            zeta * self.velocity <= ZETA_SAFETY * self.velocity_bound
            and zeta**2 * self.stress <= ZETA_SAFETY * self.stress_bound
            and zeta**3 * self.stress_rate <= ZETA_SAFETY * self.stress_rate_bound
        )


def base_norms(V: InitialFlow, table: ParameterTable, settings: SchemeSettings) -> BaseNorms:
    small = Grid(16)
    S = resample(V.shape, small)
    BS = antidiv(S)
    t = np.linspace(V.profile.onset, V.profile.onset + V.profile.duration, _PROFILE_SAMPLES)
    phi = np.abs(V.profile(t)).max()
    dphi = np.abs(V.profile.derivative(t)).max()
    ddphi = np.abs(V.profile.second_derivative(t)).max()
    lam1 = table.lam(1)
    op = float(operator_norm(np.moveaxis(BS.physical, 0, -1)).max())
    return BaseNorms(
        velocity=phi * (c1_norm(S) + lambda_pow(S, 1.0).sup_norm()),
        stress=2.0 * dphi * (op + gradient_sup(BS) / lam1),
        stress_rate=2.0 * ddphi * op,
        velocity_bound=settings.M * table.lam(-1) * math.sqrt(table.delta(-1)),
        stress_bound=settings.radius * lam1 * table.delta(1),
        stress_rate_bound=lam1 * table.delta(1) / table.tau_m(0),
    )


def admissible_zeta(norms: BaseNorms, iterations: int = 60) -> float:
    """Largest ζ in (0, 1] with all rescaled estimates satisfied, by bisection."""
    if norms.admissible(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if norms.admissible(mid):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise InitialDataError("zeta: no admissible rescaling found")
    return lo


def run_timegrid(V: InitialFlow, table: ParameterTable, zeta: float, nt: int) -> TimeGrid:
    """Window of nt samples with dt = τ_{m,1}/8 centered on the steepest rise of the rescaled V.

    There ∂_tV, hence R₀, is largest; the window is far shorter than the rescaled bump.
    """
    dt = table.tau_m(1) / 8
    center = V.profile.steepest_rise() / zeta
    return TimeGrid(t0=center - 0.5 * (nt - 1) * dt, dt=dt, nt=nt)


def initialize(
    V: InitialFlow,
    zeta: Union[float, str],
    table: ParameterTable,
    timegrid: Optional[TimeGrid] = None,
    settings: Optional[SchemeSettings] = None,
    nt: int = 24,
) -> SystemState:
    """
    Build (u₀, v₀, R₀, F₀) = (-V, V, 2B∂_tV, B(N(V) - ∂_tV)) for the rescaled V.

    Args:
        V: Initial flow
        zeta: Rescaling factor or "auto" (largest admissible, by bisection)
        table: Parameter table
        timegrid: Sampling of the run; defaults to run_timegrid(V, table, zeta, nt)
        settings: Scheme settings (ε, M)
        nt: Samples of the default window

    Returns:
        The q = 0 state with v active
    """
    settings = settings or SchemeSettings()
    V.check()
    if zeta == "auto":
        zeta = admissible_zeta(base_norms(V, table, settings))
    zeta = float(zeta)
    if zeta <= 0:
        raise InitialDataError(f"zeta: must be positive, got {zeta}")
    timegrid = timegrid or run_timegrid(V, table, zeta, nt)

    v0 = V.sample(timegrid, zeta)
    if V.shape.sup_norm() > 0 and v0.sup_norm() == 0.0:
        raise InitialDataError(
            f"time_window: V vanishes on [{timegrid.t0:.6g}, {timegrid.t1:.6g}], "
            f"support is ({V.rescaled_onset(zeta):.6g}, {(V.profile.onset + V.profile.duration) / zeta:.6g})"
        )
    dtv = time_derivative(v0, timegrid.dt)
    nonlinear = sqg_nonlinearity(v0)
    F0 = antidiv(nonlinear - dtv)
    R0 = antidiv(dtv * 2.0)
    logger.info("initialized with ζ=%.6g on %d samples from t=%.6g (dt=%.3e)", zeta, timegrid.nt, timegrid.t0, timegrid.dt)
    return SystemState(
        q=0,
        u=-v0,
        v=v0,
        R=R0,
        force_terms=(F0,),
        active_role=Role.V_ACTIVE,
        table=table,
        timegrid=timegrid,
        zeta=zeta,
    )


# ============ One step ============

def temporal_support(timegrid: TimeGrid, fields: list) -> Optional[tuple[float, float]]:
    """(first, last) sample time where any field is nonzero."""
    alive = np.zeros(timegrid.nt, dtype=bool)
    for f in fields:
        alive |= np.abs(f.coeffs).reshape(timegrid.nt, -1).max(axis=1) > 0.0
    if not alive.any():
        return None
    idx = np.nonzero(alive)[0]
    t = timegrid.times
    return float(t[idx[0]]), float(t[idx[-1]])


@dataclass(frozen=True, eq=False)
class IterationReport:
    q: int
    step: StepScales
    breakdown: object
    measured_M: float
    amplitude_ratio: float
    cancellation: float
    leakage: float
    slabs: tuple
    partition_constant: float
    jacobian_defect: float
    transport_constant: float
    transport_gain: float
    nash_scalar_defect: float
    cross_split_defect: float
    oscillation_low: float
    oscillation_low_bound: float
    reversibility: float = 0.0
    commutators: dict = field(default_factory=dict)
    perturbation: object = None
    flows: dict = field(default_factory=dict)

    def identity_flags(self) -> dict[str, bool]:
        """Checks that hold at machine precision whatever the scales."""
        nash_size = self.breakdown.components["nash"].sup_norm()
        return {
            "cancellation_exact": self.cancellation < 1e-11 * self.step.delta,
            "frequency_support": self.leakage < 1e-10,
            "volume_preserving": self.jacobian_defect < 1e-6,
            "transport_constant": self.transport_constant <= 2.0,
            "nash_scalar_form": self.nash_scalar_defect <= 1e-11 * nash_size,
            "cross_terms_split": self.cross_split_defect < 1e-11,
        }

    def measurements(self) -> dict[str, float]:
        """Measured constants of the estimates; reported, never enforced."""
        out = {
            "measured_M": self.measured_M,
            "amplitude_ratio": self.amplitude_ratio,
            "cancellation": self.cancellation,
            "leakage": self.leakage,
            "slabs": float(len(self.slabs)),
            "partition_constant": self.partition_constant,
            "jacobian_defect": self.jacobian_defect,
            "transport_constant": self.transport_constant,
            "transport_gain": self.transport_gain,
            "nash_scalar_defect": self.nash_scalar_defect,
            "cross_split_defect": self.cross_split_defect,
            "oscillation_low": self.oscillation_low,
            "oscillation_low_bound": self.oscillation_low_bound,
            "reversibility": self.reversibility,
            "stress_flags_pass": float(self.breakdown.all_pass),
        }
        for name, ratio in self.breakdown.richardson.items():
            out[f"richardson_{name}"] = ratio
        for (i, r), value in sorted(self.commutators.items()):
            out[f"commutator_{i}_{r}"] = value
        return out


def iterate_once(state: SystemState, settings: Optional[SchemeSettings] = None) -> tuple[SystemState, IterationReport]:
    """One step q -> q+1: perturb the active velocity and assemble the new stress; u/F untouched."""
    settings = settings or SchemeSettings()
    q = state.q
    step = state.table.step(q)
    tg = state.timegrid
    grid = state.grid
    active = state.active

    R_ell = mollify_time(state.R, tg, step.tau_m)
    support = temporal_support(tg, [active, state.R, R_ell] + list(state.force_terms))
    partition = build_partition(step, support, tau_c=step.tau_c * settings.tau_c_scale)
    logger.info("step q=%d: λ=%d, τ_m=%.3e, τ_c=%.3e, %d slabs", q, step.lam, step.tau_m, partition.tau_c, len(partition.indices))

    solver = CharacteristicSolver(active, tg, cfl=settings.cfl, max_substeps=settings.max_substeps, mode_limit=settings.mode_limit)
    flows = {i: solve_flow(active, tg, i, partition, solver=solver) for i in partition.indices}

    amps = amplitudes(R_ell, step, settings.radius)
    keep = None
    if settings.keep_pieces:
        keep = tg.nt // 2 if settings.piece_sample is None else settings.piece_sample
    pert = build_perturbation(amps, flows, partition, tg, grid, settings.width, keep_sample=keep)
    w = pert.total

    tran = transport_error(w, active, tg)
    nash = nash_error(w, active)
    osc = oscillation_error(w, R_ell, step, settings.width)
    R_next, breakdown = assemble(
        state.R,
        R_ell,
        {"oscillation": osc.stress, "transport": tran, "nash": nash},
        step,
        settings.radius,
        tg.dt,
        oscillation=osc,
    )

    lv_c1 = advecting_c1(active)
    commutators, reversibility = {}, 0.0
    if settings.diagnostics and partition.indices:
        commutators = _commutator_sample(state, partition, flows, amps, step, settings)
        reversibility = flows[partition.indices[0]].reversibility_defect(solver)

    report = IterationReport(
        q=q,
        step=step,
        breakdown=breakdown,
        measured_M=pert.measured_M,
        amplitude_ratio=amps.sup_ratio(),
        cancellation=cancellation_residual(amps, R_ell),
        leakage=frequency_leakage(w, step, settings.width),
        slabs=partition.indices,
        partition_constant=partition.derivative_constant(),
        jacobian_defect=max((f.max_jacobian_defect() for f in flows.values()), default=0.0),
        transport_constant=max((f.transport_constant(lv_c1) for f in flows.values()), default=0.0),
        transport_gain=transport_gain(tran, w, active, step, tg.dt),
        nash_scalar_defect=nash_scalar_defect(w, active) if settings.diagnostics else 0.0,
        cross_split_defect=cross_split_defect(w, active) if settings.diagnostics else 0.0,
        oscillation_low=osc.low_norm,
        oscillation_low_bound=osc.low_bound,
        reversibility=reversibility,
        commutators=commutators,
        perturbation=pert,
        flows=flows,
    )
    new_state = state.with_active(active + w, q=q + 1, R=R_next)
    return new_state, report


def _commutator_sample(state, partition, flows, amps, step, settings) -> dict:
    """Commutator norm at the anchor-nearest sample of the first slab, per direction."""
    i = partition.indices[0]
    flow = flows[i]
    if not len(flow.times):
        return {}
    j = int(np.argmin(np.abs(flow.times - flow.anchor)))
    g = int(flow.sample_indices[j])
    tag = partition.family_tag(i)
    advecting = lambda_pow(state.active.sample(g), 1.0).physical
    chi = float(partition.chi(i, flow.times[j]))
    out = {}
    for r, k in enumerate(get_direction_sets()[tag].representatives):
        wave = WaveSpec(k, step.lam)
        psi = phase_field(flow, wave).sample(j)
        piece = chi * amps.field(tag, r).values[g] * psi * wave.b(state.grid)
        out[(i, r)] = commutator_norm(state.grid, piece, wave, advecting, settings.width)
    return out


def swap_roles(state: SystemState) -> SystemState:
    """R ← -R̃, F ← F + R̃, active role flipped.

    Absorbing the exact negation of the last absorbed stress cancels it, so
    two swaps in a row restore (R, F) bitwise.
    """
    R_tilde = state.R
    terms = state.force_terms
    if len(terms) > 1 and np.array_equal(terms[-1].coeffs, -R_tilde.coeffs):
        terms = terms[:-1]
    else:
        terms = terms + (R_tilde,)
    return replace(state, R=-R_tilde, force_terms=terms, active_role=state.active_role.flipped())


# ============ Residuals ============

def momentum_residual_field(state: SystemState, which: str = "active", project: bool = True) -> VectorField:
    """∂_t f + N(f) - div F - (div R if active), Leray-projected unless project=False."""
    if which not in ("active", "inactive"):
        raise ValueError(f"which must be 'active' or 'inactive', got {which!r}")
    f = state.active if which == "active" else state.inactive
    r = time_derivative(f, state.timegrid.dt) + sqg_nonlinearity(f) - div(state.F)
    if which == "active":
        r = r - div(state.R)
    return leray(r) if project else r


def residual(state: SystemState, which: str = "active") -> float:
    return momentum_residual_field(state, which).sup_norm()


def residual_scale(state: SystemState, which: str = "active") -> float:
    """Largest sup norm among the terms of the equation."""
    f = state.active if which == "active" else state.inactive
    terms = [time_derivative(f, state.timegrid.dt), sqg_nonlinearity(f), div(state.F)]
    if which == "active":
        terms.append(div(state.R))
    return max(t.sup_norm() for t in terms)


def reconstruct_pressure(state: SystemState, which: str = "active") -> ScalarField:
    """p with Δp = div(div F + div R - ∂_t f - N(f))."""
    g = -momentum_residual_field(state, which, project=False)
    grid = state.grid
    c = g.coeffs
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(grid.k2 > 0, -1.0 / grid.k2, 0.0)
    rhs = 1j * grid.kx * c[..., 0, :, :] + 1j * grid.ky * c[..., 1, :, :]
    return ScalarField(grid, (rhs * inv)[..., None, :, :], g.band)


@dataclass(frozen=True, eq=False)
class ScalarRecovery:
    theta_u: ScalarField
    theta_v: ScalarField
    force: ScalarField
    residual_u: ScalarField
    residual_v: ScalarField


def _scalar_residual(theta: ScalarField, force: ScalarField, extra: Optional[ScalarField], dt: float) -> ScalarField:
    U = lambda_pow(grad_perp(theta), -1.0)
    r = time_derivative(theta, dt) + dot(U, grad(theta)) - force
    return r - extra if extra is not None else r


def scalar_recover(state: SystemState) -> ScalarRecovery:
    """θ = -∇⊥·v, f = -∇⊥·div F, and ∂_tθ + U·∇θ - f (- ∇⊥·div R on the active side) with U = Λ^{-1}∇⊥θ."""
    dt = state.timegrid.dt
    theta_u = -curl(state.u)
    theta_v = -curl(state.v)
    force = -curl(div(state.F))
    stress = -curl(div(state.R))
    v_active = state.active_role is Role.V_ACTIVE
    return ScalarRecovery(
        theta_u=theta_u,
        theta_v=theta_v,
        force=force,
        residual_u=_scalar_residual(theta_u, force, None if v_active else stress, dt),
        residual_v=_scalar_residual(theta_v, force, stress if v_active else None, dt),
    )


def scalar_consistency(state: SystemState) -> dict[str, float]:
    """Per system, sup|scalar residual + ∇⊥·(momentum residual)| relative to the scalar terms."""
    recovery = scalar_recover(state)
    dt = state.timegrid.dt
    out = {}
    for name, f, res in (("u", state.u, recovery.residual_u), ("v", state.v, recovery.residual_v)):
        which = "active" if f is state.active else "inactive"
        from_momentum = -curl(momentum_residual_field(state, which, project=False))
        scale = max(
            curl(time_derivative(f, dt)).sup_norm(),
            curl(sqg_nonlinearity(f)).sup_norm(),
            recovery.force.sup_norm(),
            1e-300,
        )
        out[name] = (res - from_momentum).sup_norm() / scale
    return out


def pressure_consistency(state: SystemState, which: str = "active") -> float:
    """sup|r + ∇p - ℙr| / scale for the unprojected residual r and the reconstructed p."""
    raw = momentum_residual_field(state, which, project=False)
    p = reconstruct_pressure(state, which)
    defect = raw + grad(p) - leray(raw)
    return defect.sup_norm() / max(residual_scale(state, which), 1e-300)


# ============ Audits ============

def temporal_support_audit(state: SystemState) -> tuple[float, float]:
    """(cutoff, max |field| on samples t <= cutoff) with cutoff = 1 - Σ_{i<=q} τ_{m,i}."""
    cutoff = 1.0 - state.table.mollification_budget(state.q)
    idx = np.nonzero(state.timegrid.times <= cutoff)[0]
    worst = 0.0
    if idx.size:
        for f in (state.u, state.v, state.R, state.F):
            worst = max(worst, float(np.abs(f.physical[idx]).max()))
    return cutoff, worst


def update_masks_disjoint(grid: Grid, step_v: StepScales, step_u: StepScales, width: float = DEFAULT_SHELL_WIDTH) -> bool:
    """Shell masks of a v-update (family step_v.parity) and a u-update never intersect."""
    mask_v = shell_union_mask(grid, step_v, width)
    mask_u = shell_union_mask(grid, step_u, width)
    return not np.any(mask_v & mask_u)
