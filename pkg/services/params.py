"""
Iteration parameters of the alternating scheme and their calculus.

Frequencies λ_q are integers (multiples of 85 so that λk ∈ ℤ² for every
direction k), amplitudes δ_q = λ_q^{-2β}, and the two time scales
τ_m (mollification) and τ_c (Lagrangian slab length) are derived from them.
Everything is evaluated with mpmath so that the scale comparisons stay
meaningful when λ has hundreds of digits.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from mpmath import mp
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

LAMBDA_QUANTUM = 85
DEFAULT_SMALLNESS = 0.1

# Table indices run from FIRST_INDEX to qmax + 1.
FIRST_INDEX = -2

_WORKING_DPS = 60


class ParameterError(ValueError):
    """Invalid parameter configuration or table request."""


class TableMode(Enum):
    RIGOR = "rigor"
    DESK = "desk"


class ParameterConfig(BaseModel):
    """Scalar configuration of the iteration."""

    model_config = ConfigDict(frozen=True)

    a: float = Field(default=2.0, ge=2.0)
    b: float = Field(default=1.2, gt=1.0, lt=2.0)
    beta: float = Field(default=0.8, gt=0.75, lt=1.0)
    eps: float = Field(default=0.1, gt=0.0)
    M: float = Field(default=1.0, gt=0.0)
    smallness: float = Field(default=DEFAULT_SMALLNESS, gt=0.0, lt=1.0)


def _mp(x) -> "mp.mpf":
    # repr keeps the decimal the user typed (1.2, not 1.19999...)
    return mp.mpf(repr(x)) if isinstance(x, float) else mp.mpf(x)


def rigor_lambda(a: float, b: float, q: int) -> int:
    """λ_q = 85⌈a^{b^q}⌉, exact for any q (negative q allowed)."""
    with mp.workdps(_WORKING_DPS):
        digits = float(mp.power(_mp(b), q) * mp.log10(_mp(a)))
    with mp.workdps(max(_WORKING_DPS, int(digits) + 30)):
        value = mp.power(_mp(a), mp.power(_mp(b), q))
        return LAMBDA_QUANTUM * int(mp.ceil(value))


def _desk_lambdas(override: Sequence[int], qmax: int) -> list[int]:
    lams = [int(x) for x in override]
    if len(lams) < 2:
        raise ParameterError("override_lambda needs at least two frequencies")
    for lam in lams:
        if lam <= 0 or lam % LAMBDA_QUANTUM:
            raise ParameterError(
                f"override frequency {lam} is not a positive multiple of {LAMBDA_QUANTUM}"
            )
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise ParameterError(f"override_lambda must be strictly increasing: {lams}")
    while len(lams) < qmax + 2:
        lams.append(2 * lams[-1] - lams[-2])
    return [lams[0]] * (-FIRST_INDEX) + lams[: qmax + 2]


@dataclass(frozen=True)
class StepScales:
    """Scales used by one step q -> q+1."""

    q: int
    lam: int            # λ_{q+1}
    delta: float        # δ_{q+1}
    lam_low: int        # λ_q
    tau_m: float        # τ_{m,q+1}
    tau_c: float        # τ_{c,q+1}
    lam_next: int       # λ_{q+2}
    delta_next: float   # δ_{q+2}

    @property
    def parity(self) -> int:
        return self.q % 2

    @property
    def stress_bound(self) -> float:
        """λ_{q+2}δ_{q+2}, the size allowed for the next stress."""
        return self.lam_next * self.delta_next


@dataclass(frozen=True)
class ParameterTable:
    """All scale sequences; index q runs over FIRST_INDEX..qmax+1."""

    qmax: int
    mode: TableMode
    config: ParameterConfig
    raw_lambdas: tuple
    _delta: tuple = field(repr=False)
    _tau_m: tuple = field(repr=False)
    _tau_c: tuple = field(repr=False)

    def _slot(self, q: int, last: int) -> int:
        if q < FIRST_INDEX or q > last:
            raise ParameterError(f"index q={q} outside [{FIRST_INDEX}, {last}]")
        return q - FIRST_INDEX

    def lam(self, q: int) -> int:
        return self.raw_lambdas[self._slot(q, self.qmax + 1)]

    def delta_mp(self, q: int):
        return self._delta[self._slot(q, self.qmax + 1)]

    def _time_slot(self, q: int) -> int:
        if q < 0 or q > self.qmax:
            raise ParameterError(f"time scales exist for q in [0, {self.qmax}], got {q}")
        return q

    def tau_m_mp(self, q: int):
        return self._tau_m[self._time_slot(q)]

    def tau_c_mp(self, q: int):
        return self._tau_c[self._time_slot(q)]

    def delta(self, q: int) -> float:
        return float(self.delta_mp(q))

    def tau_m(self, q: int) -> float:
        return float(self.tau_m_mp(q))

    def tau_c(self, q: int) -> float:
        return float(self.tau_c_mp(q))

    @property
    def lambdas(self) -> tuple:
        return tuple(self.lam(q) for q in range(self.qmax + 1))

    @property
    def deltas(self) -> tuple:
        return tuple(self.delta(q) for q in range(self.qmax + 1))

    @property
    def tau_ms(self) -> tuple:
        return tuple(self.tau_m(q) for q in range(self.qmax + 1))

    @property
    def tau_cs(self) -> tuple:
        return tuple(self.tau_c(q) for q in range(self.qmax + 1))

    def step(self, q: int) -> StepScales:
        if q < 0 or q > self.qmax - 1:
            raise ParameterError(f"step q={q} needs 0 <= q <= qmax-1 = {self.qmax - 1}")
        return StepScales(
            q=q,
            lam=self.lam(q + 1),
            delta=self.delta(q + 1),
            lam_low=self.lam(q),
            tau_m=self.tau_m(q + 1),
            tau_c=self.tau_c(q + 1),
            lam_next=self.lam(q + 2),
            delta_next=self.delta(q + 2),
        )

    def mollification_budget(self, q: int) -> float:
        """Σ_{i≤q} τ_{m,i}: fields vanish on [0, 1 - budget] after step q-1."""
        return float(sum(self.tau_m_mp(i) for i in range(0, q + 1)))


def build_table(
    config: ParameterConfig,
    qmax: int,
    mode: TableMode = TableMode.RIGOR,
    override_lambda: Optional[Sequence[int]] = None,
) -> ParameterTable:
    """Populate λ, δ, τ_m, τ_c.

    Args:
        config: Scalar configuration (a, b, β, ε, M, smallness)
        qmax: Last level; must be at least 2
        mode: RIGOR uses 85⌈a^{b^q}⌉, DESK may substitute override_lambda
        override_lambda: Strictly increasing multiples of 85 (desk mode only)

    Returns:
        The immutable ParameterTable
    """
    if qmax < 2:
        raise ParameterError(f"qmax must be >= 2, got {qmax}")
    if override_lambda is not None and mode is not TableMode.DESK:
        raise ParameterError("override_lambda is only accepted in desk mode")

    if override_lambda is not None:
        lams = _desk_lambdas(override_lambda, qmax)
    else:
        lams = [rigor_lambda(config.a, config.b, q) for q in range(FIRST_INDEX, qmax + 2)]
        if mode is TableMode.DESK:
            lams[: -FIRST_INDEX] = [lams[-FIRST_INDEX]] * (-FIRST_INDEX)
        growing = lams[-FIRST_INDEX:]
        if any(b <= a for a, b in zip(growing, growing[1:])):
            raise ParameterError(
                f"λ_q is not strictly increasing for a={config.a}, b={config.b}: {growing}"
            )

    digits = len(str(lams[-1]))
    with mp.workdps(max(_WORKING_DPS, 4 * digits)):
        beta = _mp(config.beta)
        lam_mp = [mp.mpf(x) for x in lams]
        delta = [mp.power(x, -2 * beta) for x in lam_mp]

        def at(seq, q):
            return seq[q - FIRST_INDEX]

        tau_m = []
        tau_c = []
        for q in range(0, qmax + 1):
            tau_m.append(1 / (at(lam_mp, q - 2) * at(lam_mp, q) * mp.sqrt(at(delta, q - 2))))
            tau_c.append(
                1 / (at(lam_mp, q) * at(lam_mp, q + 1) * at(delta, q + 1) / mp.sqrt(at(delta, q)))
            )
        table = ParameterTable(
            qmax=qmax,
            mode=mode,
            config=config,
            raw_lambdas=tuple(lams),
            _delta=tuple(delta),
            _tau_m=tuple(tau_m),
            _tau_c=tuple(tau_c),
        )
    logger.info(
        "parameter table (%s): λ_0..λ_%d = %s",
        mode.value, qmax, table.lambdas if digits < 20 else f"... ({digits} digits at the top)",
    )
    return table


# ============ Parameter calculus ============

@dataclass(frozen=True)
class InequalityRecord:
    name: str
    q: int
    lhs: float
    rhs: float
    ratio: float
    holds: bool
    diagnostic: bool = False


@dataclass(frozen=True)
class ThresholdRecord:
    name: str
    value: float
    beta: float
    margin: float
    kind: str  # "upper" or "lower"
    holds: bool


@dataclass(frozen=True)
class InequalityReport:
    records: tuple
    thresholds: tuple
    mode: TableMode

    @property
    def records_hold(self) -> bool:
        return all(r.holds for r in self.records)

    @property
    def thresholds_hold(self) -> bool:
        return all(t.holds for t in self.thresholds)

    @property
    def all_hold(self) -> bool:
        return self.records_hold and self.thresholds_hold


def beta_thresholds(b: float) -> dict[str, float]:
    """The six β thresholds at rate b (T1-T4 upper bounds, T5-T6 lower bounds)."""
    if not 1.0 < b < 2.0:
        raise ParameterError(f"b must lie in (1, 2), got {b}")
    with mp.workdps(40):
        x = _mp(b)
        values = {
            "T1": (x**3 + x**2 + x - 1) / (2 * x**3 + x**2 - 1),
            "T2": (x**2 + 1) / (2 * x**2),
            "T3": (x**2 + x + 2) / (2 * x**2 + x + 1),
            "T4": (x + 1) / (2 * x),
            "T5": (x**2 + x + 1) / (2 * x**2 + x + 1),
            "T6": 1 / (x + 1),
        }
        return {name: float(v) for name, v in values.items()}


def threshold_records(b: float, beta: float) -> tuple:
    records = []
    for name, value in beta_thresholds(b).items():
        if name in ("T5", "T6"):
            holds = beta >= value if name == "T5" else beta > value
            records.append(ThresholdRecord(name, value, beta, beta - value, "lower", holds))
        else:
            records.append(ThresholdRecord(name, value, beta, value - beta, "upper", beta < value))
    return tuple(records)


def check_inequalities(table: ParameterTable, config: ParameterConfig, q: int) -> InequalityReport:
    """Evaluate every scale comparison at level q.

    A record holds when lhs/rhs <= config.smallness. Desk-mode records are
    flagged diagnostic: surrogate λ's say nothing about the asymptotic claims.
    """
    if q < 1 or q > table.qmax - 2:
        raise ParameterError(f"check_inequalities needs 1 <= q <= qmax-2, got q={q}")

    digits = len(str(table.lam(table.qmax + 1)))
    with mp.workdps(max(_WORKING_DPS, 4 * digits)):
        lam = lambda j: mp.mpf(table.lam(j))  # noqa: E731
        dl = table.delta_mp
        tm = lambda j: 1 / table.tau_m_mp(j)  # noqa: E731  (rates τ^{-1})
        tc = lambda j: 1 / table.tau_c_mp(j)  # noqa: E731

        next_stress = lam(q + 2) * dl(q + 2)
        transport_low = lam(q - 1) * lam(q) * mp.sqrt(dl(q - 1))
        third_lhs = mp.sqrt(dl(q + 1)) * tm(q) / lam(q + 1)
        pairs = [
            ("1st_inequality", transport_low, tc(q + 1)),
            (
                "2nd_inequality",
                tm(q) * dl(q + 1) / (lam(q - 1) * mp.sqrt(dl(q - 1))),
                next_stress,
            ),
            ("3rd_ineq", third_lhs, next_stress),
            (
                "implication_un",
                third_lhs + mp.sqrt(dl(q + 1)) * transport_low / lam(q + 1),
                next_stress,
            ),
            (
                "1st_derived",
                lam(q - 1) ** 2 * lam(q + 1) * mp.sqrt(dl(q - 1)) / (lam(q) * tc(q + 1)),
                mp.mpf(1),
            ),
            ("osc_1_ineq", lam(q) * dl(q + 1), next_stress),
            ("M_q+1_tau_c", tc(q + 1), tm(q + 1)),
            ("M_q+1_tau_m", tm(q), tm(q + 1)),
            (
                "M_q+1_v_time",
                lam(q) ** 2 * lam(q + 1) * dl(q + 1) / (lam(q - 1) * mp.sqrt(dl(q - 1))),
                tm(q + 1),
            ),
        ]
        diagnostic = table.mode is TableMode.DESK
        records = []
        for name, lhs, rhs in pairs:
            ratio = float(lhs / rhs)
            records.append(
                InequalityRecord(
                    name=name,
                    q=q,
                    lhs=float(lhs),
                    rhs=float(rhs),
                    ratio=ratio,
                    holds=ratio <= config.smallness,
                    diagnostic=diagnostic,
                )
            )

    failed = [r.name for r in records if not r.holds]
    if failed and diagnostic:
        logger.warning("desk table, q=%d: diagnostic records above smallness: %s", q, failed)
    return InequalityReport(
        records=tuple(records),
        thresholds=threshold_records(config.b, config.beta),
        mode=table.mode,
    )


def check_all(table: ParameterTable, config: ParameterConfig) -> list[InequalityReport]:
    """Reports for every admissible q = 1..qmax-2."""
    return [check_inequalities(table, config, q) for q in range(1, table.qmax - 1)]
