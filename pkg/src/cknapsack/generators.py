"""Seeded instance generators.

Randomness comes from random.Random (MT19937), which is stable across
platforms and Python versions for the integer methods used here, so a seed
fully determines the instance.
"""

from __future__ import annotations

import math
from fractions import Fraction
from random import Random

from .core import ComplexDemand, DemandSet, Instance, Quadrant
from .errors import PreconditionViolated
from .mdkp import MdkpInstance, make_user

GRID = 48  # demand coordinates are multiples of C/GRID


def _tan_bound(deg: float) -> Fraction:
    """Rational under-approximation of tan(deg°) on a dyadic grid."""
    t = math.tan(math.radians(deg))
    return Fraction(max(0, math.floor(t * 4096)), 4096)


def gen_instance(seed: int, n: int, k: int, phi_max_deg: int,
                 capacity: Fraction) -> Instance:
    """n users, up to k nonzero entries each, arguments within phi_max_deg.

    Magnitudes stay <= capacity; values are integers in [1, 100]. Users whose
    sets lie in the second quadrant appear only when phi_max_deg > 90.
    """
    if not (0 < phi_max_deg < 180):
        raise PreconditionViolated("phi_max_deg must be in (0, 180)")
    if n < 0 or k < 1 or capacity <= 0:
        raise PreconditionViolated("bad generator arguments")
    rng = Random(seed)
    tan_pos = _tan_bound(phi_max_deg) if phi_max_deg < 90 else None
    tan_neg = _tan_bound(phi_max_deg - 90) if phi_max_deg > 90 else None

    users = []
    for uid in range(n):
        negative = tan_neg is not None and tan_neg > 0 and rng.random() < 0.4
        entries = []
        for _ in range(k):
            entries.append(_sample_entry(rng, capacity, negative, tan_pos, tan_neg))
        users.append(DemandSet.build(
            uid, entries, Quadrant.NEG_RE if negative else Quadrant.NONNEG_RE))
    return Instance(capacity, tuple(users))


def _sample_entry(rng: Random, capacity: Fraction, negative: bool,
                tan_pos: Fraction | None, tan_neg: Fraction | None):
    while True:
        a = rng.randint(0, GRID)
        b = rng.randint(0, GRID)
        if a == 0 and b == 0:
            continue
        if a * a + b * b > GRID * GRID:
            continue
        if negative:
            # re = -a: need a/b <= tan(theta_max), so b > 0
            if a == 0 or b == 0:
                continue
            if Fraction(a) > b * tan_neg:
                continue
            d = ComplexDemand(-Fraction(a, GRID) * capacity,
                              Fraction(b, GRID) * capacity)
        else:
            if tan_pos is not None and Fraction(b) > a * tan_pos:
                continue
            d = ComplexDemand(Fraction(a, GRID) * capacity,
                              Fraction(b, GRID) * capacity)
        value = Fraction(rng.randint(1, 100))
        return (d, value)


def gen_first_quadrant(seed: int, n: int, k: int,
                       capacity: Fraction) -> Instance:
    return gen_instance(seed, n, k, 90, capacity)


def gen_mdkp(seed: int, n: int, dims: int, entries_per_user: int,
             coord_max: int, capacity_coord: int) -> MdkpInstance:
    """Small random m-dimensional multi-choice instances for the range tests."""
    rng = Random(seed)
    users = []
    for uid in range(n):
        ents = []
        for _ in range(entries_per_user):
            vec = tuple(Fraction(rng.randint(0, coord_max)) for _ in range(dims))
            if all(c == 0 for c in vec):
                vec = tuple(Fraction(1) for _ in range(dims))
            ents.append((vec, Fraction(rng.randint(1, 50))))
        users.append(make_user(uid, ents))
    capacity = tuple(Fraction(capacity_coord) for _ in range(dims))
    return MdkpInstance(tuple(users), capacity)
