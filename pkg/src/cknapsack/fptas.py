"""Bi-criteria FPTAS: demand rounding, per-quadrant exact-fit DPs, guess sweep.

Demands are rounded up onto an L-grid (reals toward larger magnitude,
imaginaries up), per-quadrant multi-choice knapsacks are solved exactly, and
admissible guess tuples (xi+, xi-, zeta+, zeta-) are swept for the welfare
argmax. All admissibility tests and all emitted numbers are exact; the DP
tables hold LCM-scaled integer values (with an exact Fraction fallback when
scaling would overflow int64).

Two ranges share the machinery:

* "entries" (the solver): every user picks the rounding of one of their own
  declared entries and the awarded demand is that entry, so each coordinate
  is within L of its grid code and the returned entry total obeys the
  (1+3eps) violation bound while the welfare dominates the true optimum.
* "grid" (the truthful mechanism): the declaration-independent range of all
  grid-point assignments, valued by extended valuations; the grid points
  themselves are awarded, so the total exactly matches the admissible tuple
  (violation at most 1+2eps).

The guess loop is a vectorized max over the two per-quadrant tables with a
lexicographic-min tie-break on the tuple, output-identical to the literal
quadruple loop over the grids.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import (Allocation, Choice, ComplexDemand, DemandSet, Instance,
                   Quadrant)
from .errors import PreconditionViolated

NEG = -(2 ** 62)
NEG_THRESH = -(2 ** 61)


@dataclass(frozen=True)
class RoundingContext:
    """Grid data shared by the rounding, the DPs and the guess sweep.

    Grid tops carry n extra steps of headroom beyond the literal
    ceil(bound/L) endpoints: C/L is an integer by construction, so the
    ceiling absorbs no slack while rounding can add up to n*L to each
    projection; without the headroom the rounded optimum can fall off the
    grid and the welfare >= OPT guarantee breaks.
    """

    capacity: Fraction
    eps: Fraction
    P: Fraction
    n: int
    L: Fraction
    xi_plus_max: int    # A+ top in L units (headroom included)
    xi_minus_max: int   # A- top in L units
    zeta_max: int       # B top in L units
    headroom: int

    @property
    def d_hat_plus_size(self) -> int:
        return (self.xi_plus_max + 1) * (self.zeta_max + 1)

    @property
    def d_hat_minus_size(self) -> int:
        return (self.xi_minus_max + 1) * (self.zeta_max + 1)

    def admissible(self, xi_p: int, xi_m: int, z_p: int, z_m: int) -> bool:
        """Exact test (xi+ - xi-)^2 + (zeta+ + zeta-)^2 <= (1+2eps)^2 C^2."""
        rhs = ((1 + 2 * self.eps) * self.capacity / self.L) ** 2
        return Fraction((xi_p - xi_m) ** 2 + (z_p + z_m) ** 2) <= rhs


def build_context(instance: Instance, eps: Fraction, P: Fraction) -> RoundingContext:
    if P < 1:
        raise PreconditionViolated("P must be >= 1")
    if instance.tan_theta() > P:
        raise PreconditionViolated("P must dominate tan(theta) of the instance")
    if not (0 < eps <= Fraction(1, 2)) or eps.numerator != 1:
        raise PreconditionViolated("eps must be 1/q with q >= 2")
    n = max(1, instance.n)
    C = instance.capacity
    L = eps * C / (n * (P + 1))
    return RoundingContext(
        capacity=C, eps=eps, P=P, n=n, L=L,
        xi_plus_max=math.ceil(C * (1 + P) / L) + n,
        xi_minus_max=math.ceil(C * P / L) + n,
        zeta_max=math.ceil(C / L) + n,
        headroom=n,
    )


def round_demand(d: ComplexDemand, L: Fraction) -> ComplexDemand:
    """Round onto the L-grid: ceil both parts for re >= 0, floor re otherwise."""
    if L <= 0:
        raise PreconditionViolated("L must be > 0")
    im = math.ceil(d.im / L) * L
    if d.re >= 0:
        return ComplexDemand(math.ceil(d.re / L) * L, im)
    return ComplexDemand(math.floor(d.re / L) * L, im)


def rounded_feasibility_check(instance: Instance, allocation: Allocation,
                              ctx: RoundingContext) -> bool:
    """Round every chosen demand; exact |sum|^2 <= (1+2eps)^2 C^2 test."""
    total = ComplexDemand(Fraction(0), Fraction(0))
    for c in allocation.choices:
        total = total + round_demand(c.point, ctx.L)
    bound = ((1 + 2 * ctx.eps) * ctx.capacity) ** 2
    return total.mag_sq() <= bound


def rounded_tuple(instance: Instance, allocation: Allocation,
                  ctx: RoundingContext) -> tuple[int, int, int, int]:
    """(xi+, xi-, zeta+, zeta-) of the rounded allocation, in L units."""
    xi_p = xi_m = z_p = z_m = 0
    for user, c in zip(instance.users, allocation.choices):
        r = round_demand(c.point, ctx.L)
        if user.quadrant is Quadrant.NONNEG_RE:
            xi_p += int(r.re / ctx.L)
            z_p += int(r.im / ctx.L)
        else:
            xi_m += int(-r.re / ctx.L)
            z_m += int(r.im / ctx.L)
    return xi_p, xi_m, z_p, z_m


@dataclass(frozen=True)
class FptasResult:
    welfare: Fraction
    allocation: Allocation
    per_user_values: tuple[Fraction, ...]
    grid_points: tuple[ComplexDemand, ...]  # signed grid award per user
    chosen_tuple: tuple[int, int, int, int]
    guess_count: int
    violation_sq: Fraction
    ctx: RoundingContext
    range_mode: str


class _QuadrantData:
    """Integer entry data and suffix DP tables for one quadrant.

    grid_range=False: exact-fit over the users' own rounded entries.
    grid_range=True: exact-fit over arbitrary grid points with extended
    values (slack can always be absorbed, so the tables become monotone).
    """

    def __init__(self, users: list[tuple[int, DemandSet]], L: Fraction,
                 a_max: int, b_max: int, reflect: bool, vscale: int,
                 exact_mode: bool, grid_range: bool):
        self.positions = [pos for pos, _ in users]
        self.users = [u for _, u in users]
        self.a_max, self.b_max = a_max, b_max
        self.reflect = reflect
        self.exact_mode = exact_mode
        self.grid_range = grid_range
        self.entries: list[list[tuple[int, int, object, int]]] = []
        for _, u in users:
            rows = []
            for idx, e in enumerate(u.entries):
                re = -e.demand.re if reflect else e.demand.re
                g1 = math.ceil(re / L)
                g2 = math.ceil(e.demand.im / L)
                val = e.value if exact_mode else int(e.value * vscale)
                rows.append((g1, g2, val, idx))
            # canonical order for reconstruction ties: grid code, then index
            rows.sort(key=lambda r: (r[0], r[1], r[3]))
            self.entries.append(rows)
        self.tables = self._suffix_tables()

    def _empty(self):
        shape = (self.a_max + 1, self.b_max + 1)
        if self.exact_mode:
            return np.full(shape, float("-inf"), dtype=object)
        return np.full(shape, NEG, dtype=np.int64)

    def _suffix_tables(self):
        base = self._empty()
        base[0, 0] = Fraction(0) if self.exact_mode else 0
        tables = [base]
        for rows in reversed(self.entries):
            nxt = tables[0]
            if self.grid_range:
                nxt = np.maximum.accumulate(
                    np.maximum.accumulate(nxt, axis=0), axis=1)
            cur = self._empty()
            for g1, g2, val, _ in rows:
                sub = nxt[: self.a_max + 1 - g1, : self.b_max + 1 - g2]
                if self.exact_mode:
                    shifted = sub + val
                else:
                    shifted = np.where(sub > NEG_THRESH, sub + val, NEG)
                view = cur[g1:, g2:]
                np.maximum(view, shifted, out=view)
            if not self.exact_mode:
                cur[cur < NEG_THRESH] = NEG
            tables.insert(0, cur)
        return tables  # tables[k] = best over users k..end, exact fit

    def value_table(self):
        return self.tables[0]

    def _extended_grid(self, k: int, c1: int, c2: int):
        """Extended-value array over grid points g <= (c1, c2) for user k."""
        e = self._empty()[: c1 + 1, : c2 + 1]
        zero = Fraction(0) if self.exact_mode else 0
        for g1, g2, val, _ in self.entries[k]:
            if g1 <= c1 and g2 <= c2 and val > e[g1, g2]:
                e[g1, g2] = val
        e[0, 0] = max(e[0, 0], zero)
        return np.maximum.accumulate(np.maximum.accumulate(e, axis=0), axis=1)

    def reconstruct(self, c1: int, c2: int) -> list[tuple[int, int, int]]:
        """Per-user (g1, g2, witness entry index) at the exact-fit cell.

        Deterministic and value-blind among welfare ties: grid codes are
        chosen in lexicographic order (row-major over the table).
        """
        out = []
        for k in range(len(self.users)):
            target = self.tables[k][c1, c2]
            if self.grid_range:
                egrid = self._extended_grid(k, c1, c2)
                rest = self.tables[k + 1][c1::-1, c2::-1]
                total = egrid + rest
                mask = total == target
                flat = int(np.argmax(mask))
                if not mask.flat[flat]:  # pragma: no cover - DP consistency
                    raise AssertionError("no exact-fit decomposition")
                g1, g2 = divmod(flat, c2 + 1)
                val = egrid[g1, g2]
                witness = 0
                for e1, e2, v, idx in sorted(self.entries[k],
                                             key=lambda r: r[3]):
                    if e1 <= g1 and e2 <= g2 and v == val:
                        witness = idx
                        break
            else:
                found = None
                for e1, e2, v, idx in self.entries[k]:
                    if e1 <= c1 and e2 <= c2 and \
                            v + self.tables[k + 1][c1 - e1, c2 - e2] == target:
                        found = (e1, e2, idx)
                        break
                if found is None:  # pragma: no cover - DP consistency
                    raise AssertionError("no exact-fit decomposition")
                g1, g2, witness = found
            out.append((g1, g2, witness))
            c1, c2 = c1 - g1, c2 - g2
        if (c1, c2) != (0, 0):  # pragma: no cover - DP consistency
            raise AssertionError("reconstruction did not land on (0,0)")
        return out


def _value_scale(instance: Instance) -> tuple[int, bool]:
    vden = 1
    vmax = Fraction(0)
    for u in instance.users:
        for e in u.entries:
            vden = math.lcm(vden, e.value.denominator)
            vmax = max(vmax, e.value)
    exact_mode = vmax * vden * max(1, instance.n) >= 2 ** 60
    return vden, exact_mode


def solve_bifptas(instance: Instance, eps: Fraction,
                  P: Fraction | None = None, pn_mode: str = "given",
                  range_mode: str = "entries",
                  parallel: bool = False) -> FptasResult:
    """(1, 1+3eps) bi-criteria solve.

    pn_mode "auto" sets P = max(tan theta, 1) from the instance (faster, not
    declaration-independent); "given" uses the supplied P. range_mode picks
    the entry range (solver guarantees) or the declaration-independent grid
    range (the truthful mechanism's MIR).
    """
    if range_mode not in ("entries", "grid"):
        raise ValueError(f"unknown range_mode {range_mode!r}")
    if pn_mode == "auto":
        P = max(instance.tan_theta(), Fraction(1))
    if P is None:
        P = Fraction(max(1, instance.n))
    ctx = build_context(instance, eps, P)
    vscale, exact_mode = _value_scale(instance)
    grid_range = range_mode == "grid"

    plus = [(i, u) for i, u in enumerate(instance.users)
            if u.quadrant is Quadrant.NONNEG_RE]
    minus = [(i, u) for i, u in enumerate(instance.users)
             if u.quadrant is Quadrant.NEG_RE]
    qp = _QuadrantData(plus, ctx.L, ctx.xi_plus_max, ctx.zeta_max, False,
                       vscale, exact_mode, grid_range)
    qm = _QuadrantData(minus, ctx.L, ctx.xi_minus_max, ctx.zeta_max, True,
                       vscale, exact_mode, grid_range)

    up = qp.value_table()
    um = qm.value_table()
    rhs = ((1 + 2 * ctx.eps) * ctx.capacity / ctx.L) ** 2
    zcap = _zcap_array(ctx.xi_plus_max, ctx.xi_minus_max, rhs)

    best, bestpair = _sweep(up, um, zcap, ctx.xi_minus_max, exact_mode, parallel)
    if best is None:  # pragma: no cover - (0,0,0,0) is always admissible
        raise AssertionError("no admissible guess tuple")
    tup = _lexmin_tuple(up, um, zcap, bestpair, best, ctx.xi_minus_max)
    guesses = _admissible_count(ctx, zcap)

    picks_p = qp.reconstruct(tup[0], tup[2])
    picks_m = qm.reconstruct(tup[1], tup[3])
    choices: list[Choice | None] = [None] * instance.n
    grid_points: list[ComplexDemand | None] = [None] * instance.n
    values: list[Fraction | None] = [None] * instance.n
    for (pos, user), (g1, g2, widx) in zip(plus, picks_p):
        grid_points[pos] = ComplexDemand(g1 * ctx.L, g2 * ctx.L)
        values[pos] = user.entries[widx].value
        choices[pos] = Choice(grid_points[pos], None) if grid_range \
            else Choice(user.entries[widx].demand, widx)
    for (pos, user), (g1, g2, widx) in zip(minus, picks_m):
        grid_points[pos] = ComplexDemand(-(g1 * ctx.L), g2 * ctx.L)
        values[pos] = user.entries[widx].value
        choices[pos] = Choice(grid_points[pos], None) if grid_range \
            else Choice(user.entries[widx].demand, widx)
    if grid_range:
        # extended values at the awarded grid points
        from .core import extended_value
        for pos, u in enumerate(instance.users):
            values[pos] = extended_value(u, grid_points[pos])

    allocation = Allocation(tuple(choices))
    per_user = tuple(values)
    welfare = sum(per_user, Fraction(0))
    expected = best if exact_mode else Fraction(int(best), vscale)
    if welfare != expected:  # pragma: no cover - DP consistency
        raise AssertionError("reconstructed welfare mismatch")
    factor = (1 + 2 * ctx.eps) if grid_range else (1 + 3 * ctx.eps)
    bound = (factor * ctx.capacity) ** 2
    violation_sq = allocation.total.mag_sq() / (ctx.capacity ** 2)
    if allocation.total.mag_sq() > bound:  # pragma: no cover - Lemma bound
        raise AssertionError("violation bound exceeded")
    return FptasResult(welfare, allocation, per_user, tuple(grid_points), tup,
                       guesses, violation_sq, ctx, range_mode)


def _zcap_array(a_plus: int, a_minus: int, rhs: Fraction) -> np.ndarray:
    """zcap[u + a_minus] = max admissible zeta+ + zeta- for difference u."""
    out = np.full(a_plus + a_minus + 1, -1, dtype=np.int64)
    for u in range(-a_minus, a_plus + 1):
        rem = rhs - u * u
        if rem >= 0:
            out[u + a_minus] = math.isqrt(rem.numerator // rem.denominator)
    return out


def _sweep(up, um, zcap, a_minus: int, exact_mode: bool, parallel: bool):
    """Max over admissible tuples of up[x+,z+] + um[x-,z-] via row gathers."""
    ap1, bp1 = up.shape
    am1, bm1 = um.shape
    if exact_mode:
        bestpair = np.full((ap1, am1), float("-inf"), dtype=object)
        row_prefmax = {x: np.maximum.accumulate(um[x]) for x in range(am1)}
    else:
        bestpair = np.full((ap1, am1), NEG, dtype=np.int64)
        row_prefmax = {x: np.maximum.accumulate(um[x]) for x in range(am1)}
    z1 = np.arange(bp1)

    def do_row(xi_m: int):
        pref = row_prefmax[xi_m]
        if not exact_mode and pref[-1] <= NEG_THRESH:
            return None
        if exact_mode and pref[-1] == float("-inf"):
            return None
        caps = zcap[np.arange(ap1) - xi_m + a_minus]
        cap2 = caps[:, None] - z1[None, :]
        idx = np.clip(cap2, 0, bm1 - 1)
        vals = up + pref[idx]
        invalid = (cap2 < 0) | (caps[:, None] < 0)
        if exact_mode:
            vals = np.where(invalid, float("-inf"), vals)
        else:
            vals = np.where(invalid | (up <= NEG_THRESH) |
                            (pref[idx] <= NEG_THRESH), NEG, vals)
        return vals.max(axis=1)

    rows = range(am1)
    if parallel:
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(do_row, rows))
    else:
        results = [do_row(x) for x in rows]
    best = None
    for xi_m, col in enumerate(results):
        if col is None:
            continue
        bestpair[:, xi_m] = col
        top = col.max()
        if best is None or top > best:
            best = top
    if not exact_mode and best is not None and best <= NEG_THRESH:
        best = None
    if exact_mode and best == float("-inf"):
        best = None
    return best, bestpair


def _lexmin_tuple(up, um, zcap, bestpair, best, a_minus: int
                  ) -> tuple[int, int, int, int]:
    """Lexicographically smallest (xi+, xi-, zeta+, zeta-) achieving the max."""
    mask = bestpair == best
    rows = np.nonzero(mask.any(axis=1))[0]
    xi_p = int(rows[0])
    xi_m = int(np.nonzero(mask[xi_p])[0][0])
    cap = int(zcap[xi_p - xi_m + a_minus])
    bm1 = um.shape[1]
    for z_p in range(up.shape[1]):
        if cap - z_p < 0:
            break
        a = up[xi_p, z_p]
        lim = min(cap - z_p, bm1 - 1)
        for z_m in range(lim + 1):
            if a + um[xi_m, z_m] == best:
                return xi_p, xi_m, z_p, z_m
    raise AssertionError("tuple reconstruction failed")  # pragma: no cover


def _admissible_count(ctx: RoundingContext, zcap: np.ndarray) -> int:
    """Exact number of admissible guess tuples (grouped by xi+ - xi-)."""
    total = 0
    bmax = ctx.zeta_max
    for u in range(-ctx.xi_minus_max, ctx.xi_plus_max + 1):
        cap = int(zcap[u + ctx.xi_minus_max])
        if cap < 0:
            continue
        lo = max(0, u)
        hi = min(ctx.xi_plus_max, ctx.xi_minus_max + u)
        pairs = hi - lo + 1
        if pairs <= 0:
            continue
        z_pairs = 0
        for z_p in range(0, min(cap, bmax) + 1):
            z_pairs += min(cap - z_p, bmax) + 1
        total += pairs * z_pairs
    return total
