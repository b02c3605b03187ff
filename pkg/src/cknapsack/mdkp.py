"""Multiple-choice multidimensional knapsack solvers.

Two engines live here:

* the declaration-independent restricted-range optimizer (the truthful MIR
  backend): users outside a guessed fixed set are allocated integer multiples
  of a per-cell unit vector b, with at most (n-|N|)^2 units per dimension;
* the exact-fit integer DP used by the bi-criteria FPTAS (take-or-leave
  variant; the multi-choice variant lives in fptas.py).

Everything is exact rational arithmetic; the restricted-range state space is
exponential in the dimension, so a configurable state budget guards it.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import (BudgetExceeded, EmptyRange, NoExactFit,
                     PreconditionViolated)

Vec = tuple[Fraction, ...]

NEG_INF = float("-inf")


@dataclass(frozen=True)
class MdkpEntry:
    vector: Vec
    value: Fraction


@dataclass(frozen=True)
class MdkpUser:
    user_id: int
    entries: tuple[MdkpEntry, ...]  # entry 0 is the zero vector with value 0

    def __post_init__(self):
        if not self.entries or any(c != 0 for c in self.entries[0].vector):
            raise ValueError("entry 0 must be the zero vector")
        for e in self.entries:
            if any(c < 0 for c in e.vector):
                raise ValueError("coordinates must be >= 0")
            if e.value < 0:
                raise ValueError("values must be >= 0")


@dataclass(frozen=True)
class MdkpInstance:
    users: tuple[MdkpUser, ...]
    capacity: Vec

    def __post_init__(self):
        if any(c < 0 for c in self.capacity):
            raise ValueError("capacity must be >= 0")
        for u in self.users:
            for e in u.entries:
                if len(e.vector) != self.dims:
                    raise ValueError("dimension mismatch")

    @property
    def dims(self) -> int:
        return len(self.capacity)

    @property
    def n(self) -> int:
        return len(self.users)

    def universe(self) -> list[Vec]:
        """Distinct declared vectors (zero included), sorted."""
        return sorted({e.vector for u in self.users for e in u.entries})


def make_user(user_id: int, entries: Sequence[tuple[Sequence, object]],
              dims: int | None = None) -> MdkpUser:
    if dims is None:
        if not entries:
            raise ValueError("dims required for an empty entry list")
        dims = len(entries[0][0])
    zero = MdkpEntry(tuple(Fraction(0) for _ in range(dims)), Fraction(0))
    items = [MdkpEntry(tuple(Fraction(c) for c in vec), Fraction(v))
             for vec, v in entries]
    nonzero = [e for e in items if any(c != 0 for c in e.vector)]
    return MdkpUser(user_id, (zero, *nonzero))


def vec_leq(a: Vec, b: Vec) -> bool:
    return all(x <= y for x, y in zip(a, b))


def m_extended_value(user: MdkpUser, x: Vec) -> Fraction:
    best = Fraction(0)
    for e in user.entries:
        if e.value > best and vec_leq(e.vector, x):
            best = e.value
    return best


def unit_vector(fixed_total: Vec, capacity: Vec, n: int, n_fixed: int) -> Vec:
    """Eq-style unit vector b: remaining capacity split over (n-|N|)^2 units."""
    if n_fixed >= n:
        raise PreconditionViolated("no free users: the cell is the fixed allocation")
    for f, c in zip(fixed_total, capacity):
        if f > c:
            raise PreconditionViolated("fixed demands exceed capacity")
    denom = (n - n_fixed) ** 2
    return tuple((c - f) / denom for f, c in zip(fixed_total, capacity))


@dataclass(frozen=True)
class RangeCell:
    """One cell of the restricted range: fixed users plus a unit grid."""

    n: int
    members: tuple[int, ...]          # positions of fixed users, ascending
    fixed: tuple[Vec, ...]            # aligned with members
    b: Vec | None                     # None iff all users are fixed
    unit_cap: int

    def key(self) -> tuple:
        return (len(self.members), self.members, self.fixed)


def enumerate_range_cells(universe: Sequence[Vec], n: int, capacity: Vec,
                          eps: Fraction, max_cells: int = 10 ** 6) -> list[RangeCell]:
    """All cells (N, fixed) with |N| <= m/eps, in canonical order.

    The enumeration depends only on (n, capacity, eps, universe) - never on
    declared values - which is what makes the MIR declaration-independent.
    """
    dims = len(capacity)
    max_fixed = min(n, math.floor(Fraction(dims) / eps))
    uni = sorted(set(universe))
    cells: list[RangeCell] = []
    for size in range(max_fixed + 1):
        for members in itertools.combinations(range(n), size):
            for fixed in itertools.product(uni, repeat=size):
                total = tuple(sum(v[i] for v in fixed) for i in range(dims)) \
                    if size else tuple(Fraction(0) for _ in range(dims))
                if any(t > c for t, c in zip(total, capacity)):
                    continue
                if size == n:
                    cell = RangeCell(n, members, fixed, None, 0)
                else:
                    b = unit_vector(total, capacity, n, size)
                    cell = RangeCell(n, members, fixed, b, (n - size) ** 2)
                cells.append(cell)
                if len(cells) > max_cells:
                    raise BudgetExceeded(
                        f"range enumeration exceeds {max_cells} cells")
    return cells


@dataclass(frozen=True)
class RangeOptResult:
    welfare: Fraction
    vectors: tuple[Vec, ...]          # one per user, ascending position
    per_user_values: tuple[Fraction, ...]
    cell: RangeCell


def unit_candidates(entries: Sequence[tuple[Vec, Fraction]], b: Vec,
                    unit_cap: int) -> list[tuple[tuple[int, ...], Fraction]]:
    """Componentwise-minimal unit vectors covering some declared entry.

    Restricting the DP to these is observationally identical to the full unit
    grid: any allocation can be shrunk per-user to a minimal vector without
    losing value or feasibility, and the lex-min argmax only uses them.
    """
    dims = len(b)
    best: dict[tuple[int, ...], Fraction] = {(0,) * dims: Fraction(0)}
    for vector, value in entries:
        r = []
        ok = True
        for coord, bi in zip(vector, b):
            if bi == 0:
                if coord != 0:
                    ok = False
                    break
                r.append(0)
            else:
                units = math.ceil(coord / bi)
                if units > unit_cap:
                    ok = False
                    break
                r.append(units)
        if not ok:
            continue
        key = tuple(r)
        if value > best.get(key, Fraction(-1)):
            best[key] = value
    return sorted(best.items())


def _minimal_candidates(user: MdkpUser, b: Vec, unit_cap: int
                        ) -> list[tuple[tuple[int, ...], Fraction]]:
    return unit_candidates([(e.vector, e.value) for e in user.entries], b,
                           unit_cap)


class _CellSolver:
    """Suffix DP over one cell's free users with memoized unit budgets."""

    def __init__(self, free_users: list[MdkpUser], candidates, unit_cap: int,
                 dims: int, state_budget: int):
        self.users = free_users
        self.cands = candidates
        self.full = tuple(unit_cap for _ in range(dims))
        self.budget = state_budget
        self.memo: list[dict[tuple[int, ...], Fraction]] = \
            [{} for _ in range(len(free_users) + 1)]
        self.states = 0

    def value(self, j: int, rem: tuple[int, ...]) -> Fraction:
        if j == len(self.users):
            return Fraction(0)
        memo = self.memo[j]
        hit = memo.get(rem)
        if hit is not None:
            return hit
        self.states += 1
        if self.states > self.budget:
            raise BudgetExceeded("restricted-range DP state budget exhausted")
        best = Fraction(0)
        for r, v in self.cands[j]:
            if all(ri <= re for ri, re in zip(r, rem)):
                sub = self.value(j + 1, tuple(re - ri for re, ri in zip(rem, r)))
                if v + sub > best:
                    best = v + sub
        memo[rem] = best
        return best

    def solve(self) -> tuple[Fraction, list[tuple[int, ...]]]:
        total = self.value(0, self.full)
        rem = self.full
        chosen: list[tuple[int, ...]] = []
        for j in range(len(self.users)):
            # candidates are sorted ascending, so the first match is lex-min
            for r, v in self.cands[j]:
                if all(ri <= re for ri, re in zip(r, rem)) and \
                        v + self.value(j + 1, tuple(re - ri for re, ri in
                                                    zip(rem, r))) == self.value(j, rem):
                    chosen.append(r)
                    rem = tuple(re - ri for re, ri in zip(rem, r))
                    break
            else:  # pragma: no cover - DP consistency
                raise AssertionError("no reconstruction candidate")
        return total, chosen


def solve_cell(inst: MdkpInstance, cell: RangeCell,
               state_budget: int = 10 ** 7) -> RangeOptResult:
    dims = inst.dims
    fixed_map = dict(zip(cell.members, cell.fixed))
    free_pos = [i for i in range(inst.n) if i not in fixed_map]
    vectors: list[Vec | None] = [None] * inst.n
    values: list[Fraction] = [Fraction(0)] * inst.n
    welfare = Fraction(0)
    for pos, vec in fixed_map.items():
        vectors[pos] = vec
        values[pos] = m_extended_value(inst.users[pos], vec)
        welfare += values[pos]
    if free_pos:
        if cell.b is None:  # pragma: no cover - enumeration invariant
            raise AssertionError("cell with free users lacks a unit vector")
        if (cell.unit_cap + 1) ** dims * max(1, len(free_pos)) > state_budget * 8:
            raise BudgetExceeded("unit-grid state space beyond budget")
        cands = [_minimal_candidates(inst.users[p], cell.b, cell.unit_cap)
                 for p in free_pos]
        solver = _CellSolver([inst.users[p] for p in free_pos], cands,
                             cell.unit_cap, dims, state_budget)
        gained, chosen = solver.solve()
        welfare += gained
        for p, r in zip(free_pos, chosen):
            vec = tuple(ri * bi for ri, bi in zip(r, cell.b))
            vectors[p] = vec
            values[p] = m_extended_value(inst.users[p], vec)
    return RangeOptResult(welfare, tuple(vectors), tuple(values), cell)


def optimize_restricted_range(inst: MdkpInstance, eps: Fraction,
                              universe: Sequence[Vec] | None = None,
                              state_budget: int = 10 ** 7,
                              max_cells: int = 10 ** 6,
                              parallel: bool = False) -> RangeOptResult:
    """MIR argmax over the restricted range; deterministic lexicographic ties."""
    if universe is None:
        universe = inst.universe()
    cells = enumerate_range_cells(universe, inst.n, inst.capacity, eps, max_cells)
    if not cells:
        raise EmptyRange("no range cells")

    def run(cell: RangeCell) -> RangeOptResult:
        return solve_cell(inst, cell, state_budget)

    if parallel:
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    best = results[0]
    for res in results[1:]:
        if res.welfare > best.welfare:
            best = res
    return best


# --- exact-fit take-or-leave 2D DP (FPTAS building block) -------------------


@dataclass
class DpTable:
    """U(k, c1, c2): best value of a subset of the first k users fitting exactly."""

    users: tuple[tuple[int, int, Fraction], ...]  # (d1, d2, value)
    c1: int
    c2: int
    table: list  # (n+1) x (c1+1) x (c2+1), NEG_INF where unreachable


def dp_exact_2d(users: Sequence[tuple[int, int, object]], c1: int, c2: int) -> DpTable:
    if c1 < 0 or c2 < 0:
        raise PreconditionViolated("capacities must be >= 0")
    parsed = tuple((int(d1), int(d2), Fraction(v)) for d1, d2, v in users)
    for d1, d2, _ in parsed:
        if d1 < 0 or d2 < 0:
            raise PreconditionViolated("demand coordinates must be >= 0")
    layer = [[NEG_INF] * (c2 + 1) for _ in range(c1 + 1)]
    layer[0][0] = Fraction(0)
    table = [layer]
    for d1, d2, v in parsed:
        prev = table[-1]
        cur = [row[:] for row in prev]
        for a in range(d1, c1 + 1):
            prow = prev[a - d1]
            crow = cur[a]
            for bcoord in range(d2, c2 + 1):
                base = prow[bcoord - d2]
                if base != NEG_INF:
                    cand = v + base
                    if cand > crow[bcoord]:
                        crow[bcoord] = cand
        table.append(cur)
    return DpTable(parsed, c1, c2, table)


def dp_value(table: DpTable, c1: int, c2: int, k: int | None = None):
    if not (0 <= c1 <= table.c1 and 0 <= c2 <= table.c2):
        raise PreconditionViolated("capacity indices out of range")
    k = len(table.users) if k is None else k
    return table.table[k][c1][c2]


def extract_choices(table: DpTable, c1: int, c2: int) -> list[int]:
    """Users (0-based) of one optimal exact-fit subset; ties prefer 'not taken'."""
    target = dp_value(table, c1, c2)
    if target == NEG_INF:
        raise NoExactFit(f"cell ({c1}, {c2}) unreachable")
    chosen: list[int] = []
    a, bcoord = c1, c2
    for k in range(len(table.users), 0, -1):
        if table.table[k - 1][a][bcoord] == target:
            continue
        d1, d2, v = table.users[k - 1]
        chosen.append(k - 1)
        a, bcoord = a - d1, bcoord - d2
        target = target - v
    chosen.reverse()
    return chosen
