"""Exact domain types for the complex-demand knapsack.

All quantities that decide feasibility, welfare or payments are
`fractions.Fraction`; floating point appears only in derived geometric views
(angles, rotations) and never on an accept path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence, Union

from .errors import PreconditionViolated

Rational = Fraction
RationalLike = Union[Fraction, int, str]


def as_rational(x: RationalLike) -> Fraction:
    """Coerce ints and 'p/q' strings to Fraction without touching floats."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, str)):
        return Fraction(x)
    raise TypeError(f"refusing inexact conversion to Fraction: {x!r}")


@dataclass(frozen=True, order=True)
class ComplexDemand:
    """A complex-valued power demand: re = active power, im = reactive power."""

    re: Fraction
    im: Fraction

    def __add__(self, other: "ComplexDemand") -> "ComplexDemand":
        return ComplexDemand(self.re + other.re, self.im + other.im)

    def __sub__(self, other: "ComplexDemand") -> "ComplexDemand":
        return ComplexDemand(self.re - other.re, self.im - other.im)

    def mag_sq(self) -> Fraction:
        return self.re * self.re + self.im * self.im

    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def as_floats(self) -> tuple[float, float]:
        return (float(self.re), float(self.im))

    def arg(self) -> float:
        """Angle in [0, pi] for demands with im >= 0."""
        return math.atan2(float(self.im), float(self.re))


ZERO_DEMAND = ComplexDemand(Fraction(0), Fraction(0))


def demand(re: RationalLike, im: RationalLike) -> ComplexDemand:
    return ComplexDemand(as_rational(re), as_rational(im))


class Quadrant(Enum):
    NONNEG_RE = "nonneg_re"
    NEG_RE = "neg_re"


@dataclass(frozen=True)
class Entry:
    demand: ComplexDemand
    value: Fraction


@dataclass(frozen=True)
class DemandSet:
    """A multi-minded bidder: finite demand alternatives with values.

    Entry 0 is always the zero demand with value 0; all nonzero entries share
    the quadrant sign on re and have im >= 0.
    """

    user_id: int
    entries: tuple[Entry, ...]
    quadrant: Quadrant = Quadrant.NONNEG_RE

    def __post_init__(self):
        if not self.entries or not self.entries[0].demand.is_zero():
            raise ValueError("entry 0 must be the zero demand")
        if self.entries[0].value != 0:
            raise ValueError("zero demand must have value 0")
        for e in self.entries:
            if e.value < 0:
                raise ValueError("entry values must be >= 0")
            if e.demand.im < 0:
                raise ValueError("demands must have im >= 0")
            if e.demand.is_zero():
                continue
            if self.quadrant is Quadrant.NONNEG_RE and e.demand.re < 0:
                raise ValueError(f"user {self.user_id}: negative re in nonneg_re set")
            if self.quadrant is Quadrant.NEG_RE and e.demand.re >= 0:
                raise ValueError(f"user {self.user_id}: nonneg re in neg_re set")

    @staticmethod
    def build(user_id: int, entries: Iterable[tuple[ComplexDemand, RationalLike]],
              quadrant: Quadrant | None = None) -> "DemandSet":
        """Normalize raw (demand, value) pairs: insert the zero entry, infer quadrant."""
        items = [Entry(d, as_rational(v)) for d, v in entries]
        nonzero = [e for e in items if not e.demand.is_zero()]
        if quadrant is None:
            quadrant = Quadrant.NEG_RE if (nonzero and nonzero[0].demand.re < 0) \
                else Quadrant.NONNEG_RE
        zeros = [e for e in items if e.demand.is_zero()]
        zero_value = max((e.value for e in zeros), default=Fraction(0))
        if zero_value != 0:
            raise ValueError("zero demand must have value 0")
        return DemandSet(user_id, (Entry(ZERO_DEMAND, Fraction(0)), *nonzero), quadrant)

    def nonzero_entries(self) -> tuple[Entry, ...]:
        return self.entries[1:]


def prec_leq(d: ComplexDemand, f: ComplexDemand) -> bool:
    """Dominance partial order: d ⪯ f.

    Componentwise magnitude dominance with matching signs; the zero demand is
    dominated by everything.
    """
    if d.is_zero():
        return True
    if _sgn(d.re) != _sgn(f.re) or _sgn(d.im) != _sgn(f.im):
        return False
    return abs(f.re) >= abs(d.re) and abs(f.im) >= abs(d.im)


def _sgn(x: Fraction) -> int:
    return (x > 0) - (x < 0)


def extended_value(user: DemandSet, d: ComplexDemand) -> Fraction:
    """Multi-minded valuation: best declared value among entries dominated by d."""
    best = Fraction(0)
    for e in user.entries:
        if e.value > best and prec_leq(e.demand, d):
            best = e.value
    return best


def extended_value_with_witness(user: DemandSet, d: ComplexDemand) -> tuple[Fraction, int]:
    """Like extended_value but also returns the first entry index achieving it."""
    best = Fraction(0)
    witness = 0
    for i, e in enumerate(user.entries):
        if e.value > best and prec_leq(e.demand, d):
            best, witness = e.value, i
    return best, witness


@dataclass(frozen=True)
class Instance:
    """A MultiCKP instance: apparent-power capacity plus multi-minded users."""

    capacity: Fraction
    users: tuple[DemandSet, ...]

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("capacity must be > 0")
        csq = self.capacity * self.capacity
        for u in self.users:
            for e in u.entries:
                if e.demand.mag_sq() > csq:
                    raise ValueError(
                        f"user {u.user_id}: demand exceeds capacity magnitude")

    @property
    def n(self) -> int:
        return len(self.users)

    def all_demands(self) -> list[ComplexDemand]:
        return [e.demand for u in self.users for e in u.nonzero_entries()]

    @property
    def phi(self) -> float:
        """Max argument (radians) over declared demands; 0 for an empty universe."""
        return max((d.arg() for d in self.all_demands()), default=0.0)

    @property
    def theta(self) -> float:
        return max(self.phi - math.pi / 2, 0.0)

    def tan_theta(self) -> Fraction:
        """Exact tan of theta: max of -re/im over second-quadrant demands, else 0."""
        worst = Fraction(0)
        for d in self.all_demands():
            if d.re < 0:
                if d.im == 0:
                    raise PreconditionViolated(
                        "demand with re < 0 and im = 0 has angle pi (unsupported)")
                worst = max(worst, -d.re / d.im)
        return worst

    def first_quadrant(self) -> bool:
        return all(u.quadrant is Quadrant.NONNEG_RE for u in self.users)


# Allocation choices: either an index into the user's entries, or an arbitrary
# exact point (range/grid allocations).

@dataclass(frozen=True)
class Choice:
    point: ComplexDemand
    entry_index: int | None = None


@dataclass(frozen=True)
class Allocation:
    choices: tuple[Choice, ...]
    total: ComplexDemand = field(default=ZERO_DEMAND)

    def __post_init__(self):
        t = ZERO_DEMAND
        for c in self.choices:
            t = t + c.point
        object.__setattr__(self, "total", t)

    @staticmethod
    def from_entries(instance: Instance, indices: Sequence[int]) -> "Allocation":
        choices = tuple(
            Choice(u.entries[i].demand, i) for u, i in zip(instance.users, indices))
        return Allocation(choices)

    @staticmethod
    def from_points(points: Sequence[ComplexDemand]) -> "Allocation":
        return Allocation(tuple(Choice(p, None) for p in points))

    @staticmethod
    def all_zero(n: int) -> "Allocation":
        return Allocation(tuple(Choice(ZERO_DEMAND, 0) for _ in range(n)))

    def encoding(self) -> tuple:
        """Canonical value-blind key for lexicographic tie-breaking."""
        return tuple((c.point.re, c.point.im) for c in self.choices)


def feasible_total(total: ComplexDemand, capacity: Fraction,
                   beta: Fraction = Fraction(1)) -> bool:
    """Exact rational test (Σre)² + (Σim)² ≤ β²C²."""
    if beta < 1:
        raise PreconditionViolated("beta must be >= 1")
    bc = beta * capacity
    return total.mag_sq() <= bc * bc


def feasible(a: Allocation, capacity: Fraction, beta: Fraction = Fraction(1)) -> bool:
    return feasible_total(a.total, capacity, beta)


def welfare(instance: Instance, a: Allocation) -> Fraction:
    """Σ_k v_k: declared value for direct entry choices, extended value for points."""
    total = Fraction(0)
    for user, c in zip(instance.users, a.choices):
        if c.entry_index is not None:
            total += user.entries[c.entry_index].value
        else:
            total += extended_value(user, c.point)
    return total


def per_user_values(instance: Instance, a: Allocation) -> tuple[Fraction, ...]:
    vals = []
    for user, c in zip(instance.users, a.choices):
        if c.entry_index is not None:
            vals.append(user.entries[c.entry_index].value)
        else:
            vals.append(extended_value(user, c.point))
    return tuple(vals)


@dataclass(frozen=True)
class RotatedView:
    """binary64 rotation of an instance's demands, for geometric use only.

    Exact feasibility is always re-checked on the recorded originals: |Σd| is
    invariant under rotation.
    """

    original: Instance
    angle: float
    demands: tuple[tuple[tuple[float, float], ...], ...]  # per user, per entry


def rotate(instance: Instance, angle: float) -> RotatedView:
    c, s = math.cos(angle), math.sin(angle)
    rotated = tuple(
        tuple((c * float(e.demand.re) - s * float(e.demand.im),
               s * float(e.demand.re) + c * float(e.demand.im))
              for e in u.entries)
        for u in instance.users)
    return RotatedView(instance, angle, rotated)


@dataclass(frozen=True)
class RationalRotation:
    """Exact rotation with rational cos/sin (Pythagorean parametrization).

    cos = (1-t²)/(1+t²), sin = 2t/(1+t²) for rational t, so cos² + sin² = 1
    exactly and |rot(d)| = |d| exactly.
    """

    cos: Fraction
    sin: Fraction

    def __post_init__(self):
        if self.cos * self.cos + self.sin * self.sin != 1:
            raise ValueError("not a rotation: cos^2 + sin^2 != 1")

    @staticmethod
    def from_tan_half(t: Fraction) -> "RationalRotation":
        den = 1 + t * t
        return RationalRotation((1 - t * t) / den, 2 * t / den)

    @staticmethod
    def identity() -> "RationalRotation":
        return RationalRotation(Fraction(1), Fraction(0))

    def apply(self, d: ComplexDemand) -> ComplexDemand:
        return ComplexDemand(self.cos * d.re - self.sin * d.im,
                             self.sin * d.re + self.cos * d.im)

    def inverse(self) -> "RationalRotation":
        return RationalRotation(self.cos, -self.sin)

    def angle(self) -> float:
        return math.atan2(float(self.sin), float(self.cos))

    def tan(self) -> Fraction:
        if self.cos == 0:
            raise ZeroDivisionError("tan undefined at pi/2")
        return self.sin / self.cos

    def cot_sq(self) -> Fraction:
        if self.sin == 0:
            raise ZeroDivisionError("cot undefined at 0")
        return (self.cos / self.sin) ** 2


def rotation_for_delta(delta: Fraction, grid_bits: int = 16) -> RationalRotation:
    """Exact rotation by an angle γ ∈ (0, δ/2], as close to δ/2 as the grid allows.

    t is tan(δ/4) rounded down on a dyadic grid; γ = 2·atan(t) ≤ δ/2.
    """
    if delta <= 0:
        raise PreconditionViolated("delta must be > 0")
    t_float = math.tan(float(delta) / 4)
    scale = 1 << grid_bits
    t = Fraction(max(1, math.floor(t_float * scale) - 1), scale)
    rot = RationalRotation.from_tan_half(t)
    # Dyadic floor of a float can still overshoot tan(δ/4) for tiny δ; back off.
    while rot.angle() > float(delta) / 2 and t > 0:
        t = t / 2
        rot = RationalRotation.from_tan_half(t)
    if t <= 0:
        raise PreconditionViolated("delta too small for the rotation grid")
    return rot
