"""
Direction families and the coefficient functions γ_k.

Four families of rational unit vectors with denominator 85. For each family
the tensors k⊥⊗k⊥ of its three ± pairs span the symmetric 2×2 matrices, so
every matrix close to the identity decomposes as Σ_j c_j (k_j⊥⊗k_j⊥) with
c_j > 0 and γ_k = sqrt(c_j). Set construction and the base-matrix inverse
are exact (Fraction); per-point solves use the float inverse.
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

DENOMINATOR = 85

# (i, j) tags: i is the family (alternates with q), j the slab parity (base or perpendicular)
FAMILY_TAGS = ((0, 0), (0, 1), (1, 0), (1, 1))

# c(Id) of each family; a family and its perpendicular share them
IDENTITY_COEFFICIENTS = {
    0: (Fraction(4633, 5929), Fraction(7225, 11858), Fraction(7225, 11858)),
    1: (Fraction(2023, 4455), Fraction(625, 891), Fraction(38, 45)),
}


class OutOfBallError(ValueError):
    """The decomposition coefficients left the positive cone."""

    def __init__(self, message: str, coefficients=None, location: Optional[tuple] = None):
        super().__init__(message)
        self.coefficients = coefficients
        self.location = location


@dataclass(frozen=True)
class RationalVec:
    """Unit vector with exact rational coordinates, 85·(x, y) ∈ ℤ²."""

    x: Fraction
    y: Fraction

    def __post_init__(self):
        if self.x * self.x + self.y * self.y != 1:
            raise ValueError(f"({self.x}, {self.y}) is not on the unit circle")
        if (DENOMINATOR * self.x).denominator != 1 or (DENOMINATOR * self.y).denominator != 1:
            raise ValueError(f"85·({self.x}, {self.y}) is not an integer point")

    @classmethod
    def from_integers(cls, nx: int, ny: int) -> "RationalVec":
        return cls(Fraction(nx, DENOMINATOR), Fraction(ny, DENOMINATOR))

    def __neg__(self) -> "RationalVec":
        return RationalVec(-self.x, -self.y)

    @property
    def perp(self) -> "RationalVec":
        return RationalVec(-self.y, self.x)

    @property
    def integer_point(self) -> tuple[int, int]:
        return int(DENOMINATOR * self.x), int(DENOMINATOR * self.y)

    def as_array(self) -> np.ndarray:
        return np.array([float(self.x), float(self.y)])

    def sum_norm2(self, other: "RationalVec") -> Fraction:
        """|self + other|² exactly."""
        sx, sy = self.x + other.x, self.y + other.y
        return sx * sx + sy * sy

    def __str__(self) -> str:
        return f"({self.x}, {self.y})"


@dataclass(frozen=True)
class DirectionSet:
    """A family Ω_j^i: three representatives and their negatives."""

    tag: tuple[int, int]
    representatives: tuple[RationalVec, RationalVec, RationalVec]

    @property
    def members(self) -> tuple[RationalVec, ...]:
        out = []
        for k in self.representatives:
            out.extend((k, -k))
        return tuple(out)

    @property
    def label(self) -> str:
        i, j = self.tag
        return f"Ω^{i}_{j}"

    def perpendicular(self) -> "DirectionSet":
        i, j = self.tag
        return DirectionSet((i, 1 - j), tuple(k.perp for k in self.representatives))


def build_direction_sets() -> dict[tuple[int, int], DirectionSet]:
    """The two base families and their perpendiculars."""
    family0 = DirectionSet(
        (0, 0),
        (
            RationalVec.from_integers(85, 0),
            RationalVec.from_integers(36, 77),
            RationalVec.from_integers(36, -77),
        ),
    )
    family1 = DirectionSet(
        (1, 0),
        (
            RationalVec.from_integers(13, 84),
            RationalVec.from_integers(68, 51),
            RationalVec.from_integers(68, -51),
        ),
    )
    sets = {}
    for base in (family0, family1):
        sets[base.tag] = base
        perp = base.perpendicular()
        sets[perp.tag] = perp
    return {tag: sets[tag] for tag in FAMILY_TAGS}


def min_pair_norm(direction_set: DirectionSet) -> Fraction:
    """Exact min of |k+k'|² over members with k ≠ -k' (k = k' allowed)."""
    members = direction_set.members
    best = None
    for k in members:
        for other in members:
            if other == -k:
                continue
            value = k.sum_norm2(other)
            if best is None or value < best:
                best = value
    return best


def _flat_perp_tensor(k: RationalVec) -> tuple[Fraction, Fraction, Fraction]:
    p = k.perp
    return p.x * p.x, p.x * p.y, p.y * p.y


def _invert_exact(matrix: list[list[Fraction]]) -> list[list[Fraction]]:
    """Gauss-Jordan inverse over the rationals."""
    size = len(matrix)
    work = [list(row) + [Fraction(int(r == c)) for c in range(size)] for r, row in enumerate(matrix)]
    for col in range(size):
        pivot = next((r for r in range(col, size) if work[r][col] != 0), None)
        if pivot is None:
            raise ValueError("direction tensors are linearly dependent")
        work[col], work[pivot] = work[pivot], work[col]
        scale = work[col][col]
        work[col] = [v / scale for v in work[col]]
        for r in range(size):
            if r != col and work[r][col] != 0:
                factor = work[r][col]
                work[r] = [a - factor * b for a, b in zip(work[r], work[col])]
    return [row[size:] for row in work]


class GammaSolver:
    """Linear solve R ↦ c with R = Σ_j c_j (k_j⊥⊗k_j⊥), flattened as (xx, xy, yy)."""

    def __init__(self, direction_set: DirectionSet):
        self.direction_set = direction_set
        self.tag = direction_set.tag
        columns = [_flat_perp_tensor(k) for k in direction_set.representatives]
        self.base_matrix = [[columns[c][r] for c in range(3)] for r in range(3)]
        self.inverse = _invert_exact(self.base_matrix)
        self._inverse_float = np.array([[float(v) for v in row] for row in self.inverse])
        self.identity_coefficients = self.exact_coefficients(
            (Fraction(1), Fraction(0), Fraction(1))
        )
        self.radius_exact = min(
            c / sum(abs(v) for v in row)
            for c, row in zip(self.identity_coefficients, self.inverse)
        )
        self.radius = float(self.radius_exact)

    def exact_coefficients(self, flat: tuple[Fraction, Fraction, Fraction]) -> tuple[Fraction, ...]:
        return tuple(sum(row[l] * flat[l] for l in range(3)) for row in self.inverse)

    def coefficients(self, flat: np.ndarray) -> np.ndarray:
        """c for an array of flattened matrices, shape (..., 3)."""
        return np.asarray(flat, dtype=float) @ self._inverse_float.T

    def reconstruct(self, c: np.ndarray) -> np.ndarray:
        """Σ_j c_j flat(k_j⊥⊗k_j⊥), shape (..., 3)."""
        base = np.array([[float(v) for v in row] for row in self.base_matrix])
        return np.asarray(c, dtype=float) @ base.T

    def gamma(self, flat: np.ndarray) -> np.ndarray:
        """γ = sqrt(c) pointwise; raises OutOfBallError on any c_j <= 0."""
        c = self.coefficients(flat)
        if c.size and c.min() <= 0.0:
            worst = np.unravel_index(np.argmin(c.min(axis=-1)), c.shape[:-1]) if c.ndim > 1 else ()
            raise OutOfBallError(
                f"{self.direction_set.label}: coefficient {c.min():.3e} <= 0 at {worst}",
                coefficients=c[worst] if c.ndim > 1 else c,
                location=tuple(int(i) for i in worst),
            )
        return np.sqrt(c)


def flatten_symmetric(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    return np.array([m[0, 0], 0.5 * (m[0, 1] + m[1, 0]), m[1, 1]])


def gamma(direction_set: DirectionSet, matrix) -> np.ndarray:
    """γ values of the three ± pairs for one symmetric 2×2 matrix."""
    return get_gamma_solver(direction_set.tag).gamma(flatten_symmetric(matrix))


def admissible_radius(direction_set: DirectionSet) -> float:
    return get_gamma_solver(direction_set.tag).radius


# ============ Exact audit ============

@dataclass(frozen=True)
class GeometryCheck:
    name: str
    passed: bool
    detail: str


def verify_direction_sets(sets: dict[tuple[int, int], DirectionSet]) -> list[GeometryCheck]:
    """Every exact property of the families, one record per check."""
    checks = []

    for tag, s in sets.items():
        closed = all(-k in s.members for k in s.members)
        checks.append(GeometryCheck(f"negation_closed {s.label}", closed, f"{len(s.members)} members"))
        integral = True
        for k in s.members:
            try:
                RationalVec(k.x, k.y)
            except ValueError:
                integral = False
        checks.append(GeometryCheck(f"unit_85_integral {s.label}", integral, ""))
        try:
            solver = GammaSolver(s)
            c = solver.identity_coefficients
            positive = all(v > 0 for v in c) and c == IDENTITY_COEFFICIENTS.get(tag[0], c)
            detail = ", ".join(str(v) for v in c)
        except ValueError as e:
            positive, detail = False, str(e)
        checks.append(GeometryCheck(f"identity_decomposition {s.label}", positive, detail))
        pair = min_pair_norm(s)
        checks.append(GeometryCheck(f"min_pair {s.label}", pair > Fraction(1, 4), str(pair)))

    for (ta, a), (tb, b) in combinations(sets.items(), 2):
        overlap = set(a.members) & set(b.members)
        checks.append(
            GeometryCheck(
                f"disjoint {a.label} {b.label}",
                not overlap,
                ", ".join(str(k) for k in overlap),
            )
        )

    global_min = min(min_pair_norm(s) for s in sets.values())
    checks.append(GeometryCheck("global_min_pair", global_min == Fraction(242, 425), str(global_min)))
    return checks


# ============ Lazy instances ============

_direction_sets: Optional[dict] = None
_solvers: dict = {}


def get_direction_sets() -> dict[tuple[int, int], DirectionSet]:
    """Get or build the process-wide direction families."""
    global _direction_sets
    if _direction_sets is None:
        _direction_sets = build_direction_sets()
        logger.debug("direction families built")
    return _direction_sets


def get_gamma_solver(tag: tuple[int, int]) -> GammaSolver:
    if tag not in _solvers:
        _solvers[tag] = GammaSolver(get_direction_sets()[tag])
    return _solvers[tag]


def scheme_radius() -> float:
    """Default ε: the smallest certified radius over the four families."""
    return min(get_gamma_solver(tag).radius for tag in FAMILY_TAGS)
