"""Exact brute-force references.

The oracle is the single source of OPT for every approximation-ratio claim in
the test suite: full enumeration over per-user entry choices with the
quadratic feasibility test done in (scaled) integer arithmetic.

brute_force_range_opt re-optimizes a restricted range over the *full* unit
grids (no minimal-candidate pruning), as an independent cross-check of
mdkp.optimize_restricted_range.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Sequence

from .core import Allocation, Instance
from .errors import CapExceeded, EmptyRange
from .mdkp import (MdkpInstance, RangeCell, RangeOptResult, m_extended_value)

DEFAULT_CAP = 2 * 10 ** 7


def _scaled_entries(instance: Instance):
    """Integer-scaled (re, im, value) per entry so the hot loop avoids Fractions."""
    denom = instance.capacity.denominator
    vden = 1
    for u in instance.users:
        for e in u.entries:
            denom = math.lcm(denom, e.demand.re.denominator,
                             e.demand.im.denominator)
            vden = math.lcm(vden, e.value.denominator)
    users = []
    for u in instance.users:
        users.append([(int(e.demand.re * denom), int(e.demand.im * denom),
                       int(e.value * vden)) for e in u.entries])
    return users, denom, vden


def brute_force_opt(instance: Instance, beta: Fraction = Fraction(1),
                    cap: int = DEFAULT_CAP,
                    parallel: bool = False) -> tuple[Fraction, Allocation]:
    """Exact welfare optimum over all entry choices with |Σd| <= β·C.

    Deterministic: ties keep the lexicographically smallest choice vector
    (enumeration order is user index, then entry index).
    """
    combos = 1
    for u in instance.users:
        combos *= len(u.entries)
    if combos > cap:
        raise CapExceeded(f"{combos} combinations exceed cap {cap}")
    n = instance.n
    if n == 0:
        return Fraction(0), Allocation(())

    users, denom, vden = _scaled_entries(instance)
    bound = (beta * instance.capacity * denom) ** 2
    bnum, bden = bound.numerator, bound.denominator
    prunable = instance.first_quadrant()
    suffix_max = [0] * (n + 1)
    for k in range(n - 1, -1, -1):
        suffix_max[k] = suffix_max[k + 1] + max(v for _, _, v in users[k])

    state = {"val": -1, "choice": None}
    choice = [0] * n

    def rec(k: int, re: int, im: int, val: int) -> None:
        if prunable and (re * re + im * im) * bden > bnum:
            return
        # equal-value later solutions are lex-larger: prune on <=
        if state["choice"] is not None and val + suffix_max[k] <= state["val"]:
            return
        if k == n:
            if (re * re + im * im) * bden <= bnum and val > state["val"]:
                state["val"] = val
                state["choice"] = tuple(choice)
            return
        for idx, (er, ei, ev) in enumerate(users[k]):
            choice[k] = idx
            rec(k + 1, re + er, im + ei, val + ev)

    def run_from(first_idx: int) -> tuple[int, tuple | None]:
        st = {"val": -1, "choice": None}
        ch = [first_idx] + [0] * (n - 1)

        def rec2(k: int, re: int, im: int, val: int) -> None:
            if prunable and (re * re + im * im) * bden > bnum:
                return
            if st["choice"] is not None and val + suffix_max[k] <= st["val"]:
                return
            if k == n:
                if (re * re + im * im) * bden <= bnum and val > st["val"]:
                    st["val"] = val
                    st["choice"] = tuple(ch)
                return
            for idx, (er, ei, ev) in enumerate(users[k]):
                ch[k] = idx
                rec2(k + 1, re + er, im + ei, val + ev)

        er, ei, ev = users[0][first_idx]
        rec2(1, er, ei, ev)
        return st["val"], st["choice"]

    if parallel:
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(run_from, range(len(users[0]))))
        best_val, best_choice = -1, None
        for val, ch in results:  # chunk order == entry order, so lex ties hold
            if ch is not None and (val > best_val or
                                   (val == best_val and ch < best_choice)):
                best_val, best_choice = val, ch
    else:
        rec(0, 0, 0, 0)
        best_val, best_choice = state["val"], state["choice"]

    if best_choice is None:
        raise EmptyRange("no feasible choice vector")  # unreachable for beta >= 1
    return Fraction(best_val, vden), Allocation.from_entries(instance, best_choice)


def brute_force_range_opt(cells: Sequence[RangeCell], inst: MdkpInstance,
                          cap: int = DEFAULT_CAP) -> RangeOptResult:
    """Exact argmax over a materialized restricted range.

    Per free user the *entire* unit grid {0..unit_cap}^m is considered with
    its true extended value; deterministic lex-min reconstruction matches the
    documented tie-break of the pruned DP.
    """
    if not cells:
        raise EmptyRange("no range cells to optimize over")
    best: RangeOptResult | None = None
    work = 0
    for cell in cells:
        result, cost = _solve_cell_full(cell, inst)
        work += cost
        if work > cap:
            raise CapExceeded("materialized range exceeds cap")
        if best is None or result.welfare > best.welfare:
            best = result
    return best


def _solve_cell_full(cell: RangeCell, inst: MdkpInstance
                     ) -> tuple[RangeOptResult, int]:
    dims = inst.dims
    fixed_map = dict(zip(cell.members, cell.fixed))
    free_pos = [i for i in range(inst.n) if i not in fixed_map]
    vectors: list = [None] * inst.n
    welfare = Fraction(0)
    for pos, vec in fixed_map.items():
        vectors[pos] = vec
        welfare += m_extended_value(inst.users[pos], vec)
    cost = 1
    if free_pos:
        grid = list(itertools.product(range(cell.unit_cap + 1), repeat=dims))
        user_values = []
        for p in free_pos:
            vals = {r: m_extended_value(
                inst.users[p], tuple(ri * bi for ri, bi in zip(r, cell.b)))
                for r in grid}
            user_values.append(vals)
        cost = len(grid) * len(free_pos)

        memo: list[dict] = [{} for _ in range(len(free_pos) + 1)]

        def value(j: int, rem: tuple[int, ...]) -> Fraction:
            if j == len(free_pos):
                return Fraction(0)
            hit = memo[j].get(rem)
            if hit is not None:
                return hit
            out = Fraction(0)
            for r, v in user_values[j].items():
                if all(ri <= re for ri, re in zip(r, rem)):
                    sub = value(j + 1, tuple(re - ri for re, ri in zip(rem, r)))
                    if v + sub > out:
                        out = v + sub
            memo[j][rem] = out
            return out

        rem = tuple(cell.unit_cap for _ in range(dims))
        welfare += value(0, rem)
        for j, p in enumerate(free_pos):
            target = value(j, rem)
            for r in grid:  # lex order
                if all(ri <= re for ri, re in zip(r, rem)):
                    v = user_values[j][r]
                    nxt = tuple(re - ri for re, ri in zip(rem, r))
                    if v + value(j + 1, nxt) == target:
                        vectors[p] = tuple(ri * bi for ri, bi in zip(r, cell.b))
                        rem = nxt
                        break
            else:  # pragma: no cover
                raise AssertionError("no reconstruction candidate")
    values = tuple(m_extended_value(inst.users[p], vectors[p])
                   for p in range(inst.n))
    return RangeOptResult(welfare, tuple(vectors), values, cell), cost
