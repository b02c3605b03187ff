"""First-quadrant PTAS machinery.

solve_ptas guesses every small set of large demands, polygonizes the residual
region and solves the polygonized subproblem (PGZ) with either an exact
brute-force backend or the restricted-range DP. construct_witness is the
constructive half of the approximation proof and is exercised directly by the
acceptance suite; build_truthful_range/solve_truthful_ptas assemble the
declaration-independent range (guessed sets from a demand universe, refined
anchor points G(T), a zero-value dummy user) that makes the PTAS truthful.

Geometry is binary64 but every candidate allocation is emitted only after an
exact rational feasibility check at beta = 1 (range capacities are shrunk by
1e-9 so range elements pass it by construction).
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .core import (Allocation, Choice, ComplexDemand, DemandSet, Instance,
                   RationalRotation, ZERO_DEMAND, extended_value,
                   feasible_total, rotation_for_delta, welfare)
from .errors import (BudgetExceeded, DegenerateSlack, PreconditionViolated)
from .geometry import (Polygon, build_polygon, candidate_points, contains,
                       slack_widths)
from .mdkp import (MdkpInstance, RangeCell, RangeOptResult, _CellSolver,
                   make_user, optimize_restricted_range, unit_candidates,
                   unit_vector)

CAP_SHRINK = Fraction(999_999_999, 1_000_000_000)


@dataclass(frozen=True)
class GuessedSet:
    members: tuple[int, ...]                 # user positions, ascending
    demands: tuple[ComplexDemand, ...]       # one per member
    entry_indices: tuple[int, ...]

    @property
    def d_T(self) -> ComplexDemand:
        total = ZERO_DEMAND
        for d in self.demands:
            total = total + d
        return total


@dataclass(frozen=True)
class PgzResult:
    welfare: Fraction
    allocation: Allocation


@dataclass(frozen=True)
class PtasResult:
    welfare: Fraction
    allocation: Allocation
    guesses: int


def _check_eps(eps: Fraction, min_q: int = 4) -> int:
    if eps.numerator != 1 or eps.denominator < min_q:
        raise PreconditionViolated(f"eps must be 1/q with q >= {min_q}")
    return eps.denominator


def solve_ptas(instance: Instance, eps: Fraction, backend: str = "brute",
               side_cap: int | None = None, state_budget: int = 10 ** 7,
               parallel: bool = False) -> PtasResult:
    """Guess-and-polygonize PTAS for first-quadrant instances.

    backend "brute" enumerates entry choices exactly inside each polygon
    (the validation path); "range-dp" runs the restricted-range DP on the
    projected subproblem (the truthful building block; exponential in the
    polygon's sides, so realistically needs side_cap).
    """
    if not instance.first_quadrant():
        raise PreconditionViolated("PTAS requires first-quadrant demand sets")
    q = _check_eps(eps)
    guesses = list(_enumerate_guesses(instance, q))

    def run(guess: GuessedSet) -> PgzResult | None:
        return solve_pgz(instance, guess, eps, backend, side_cap, state_budget)

    if parallel:
        with ThreadPoolExecutor(max_workers=4) as pool:
            results = list(pool.map(run, guesses))
    else:
        results = [run(g) for g in guesses]

    best_w = Fraction(0)
    best_alloc = Allocation.all_zero(instance.n)
    for res in results:
        if res is not None and res.welfare > best_w:
            best_w, best_alloc = res.welfare, res.allocation
    return PtasResult(best_w, best_alloc, len(guesses))


def _enumerate_guesses(instance: Instance, q: int) -> Iterable[GuessedSet]:
    yield GuessedSet((), (), ())
    positions = range(instance.n)
    csq = instance.capacity * instance.capacity
    for size in range(1, min(instance.n, q) + 1):
        for members in itertools.combinations(positions, size):
            pools = [range(1, len(instance.users[p].entries)) for p in members]
            for idxs in itertools.product(*pools):
                demands = tuple(instance.users[p].entries[i].demand
                                for p, i in zip(members, idxs))
                total = ZERO_DEMAND
                for d in demands:
                    total = total + d
                if total.mag_sq() <= csq:
                    yield GuessedSet(members, demands, idxs)


def solve_pgz(instance: Instance, guessed: GuessedSet, eps: Fraction,
              backend: str = "brute", side_cap: int | None = None,
              state_budget: int = 10 ** 7) -> PgzResult | None:
    polygon = build_polygon(guessed.demands, instance.capacity, eps, side_cap)
    if backend == "brute":
        return _pgz_brute(instance, guessed, polygon)
    if backend == "range-dp":
        return _pgz_range_dp(instance, guessed, polygon, eps, state_budget)
    raise ValueError(f"unknown backend {backend!r}")


def _pgz_brute(instance: Instance, guessed: GuessedSet,
               polygon: Polygon) -> PgzResult | None:
    """Exact PGZ optimum over the users' own entries (the region is downward
    closed, so arbitrary universe points never beat a declared entry)."""
    fixed = dict(zip(guessed.members, guessed.entry_indices))
    free = [p for p in range(instance.n) if p not in fixed]
    base = guessed.d_T
    if not contains(polygon, base):
        return None
    base_val = sum((instance.users[p].entries[i].value
                    for p, i in fixed.items()), Fraction(0))
    suffix = [Fraction(0)] * (len(free) + 1)
    for j in range(len(free) - 1, -1, -1):
        best = max(e.value for e in instance.users[free[j]].entries)
        suffix[j] = suffix[j + 1] + best

    csq = instance.capacity * instance.capacity
    best: dict = {"val": None, "choice": None}
    choice = [0] * len(free)

    def rec(j: int, total: ComplexDemand, val: Fraction) -> None:
        if not contains(polygon, total):
            return
        if best["val"] is not None and val + suffix[j] <= best["val"]:
            return
        if j == len(free):
            if total.mag_sq() <= csq and (best["val"] is None or val > best["val"]):
                best["val"] = val
                best["choice"] = tuple(choice)
            return
        user = instance.users[free[j]]
        for idx, e in enumerate(user.entries):
            choice[j] = idx
            rec(j + 1, total + e.demand, val + e.value)

    rec(0, base, base_val)
    if best["val"] is None:
        return None
    indices = [0] * instance.n
    for p, i in fixed.items():
        indices[p] = i
    for p, i in zip(free, best["choice"]):
        indices[p] = i
    return PgzResult(best["val"], Allocation.from_entries(instance, indices))


def _rational_dims(polygon: Polygon,
                   shrink: bool = True) -> list[tuple[Fraction, Fraction, Fraction]]:
    """Constraint edges as exact rationals: (nx, ny, capacity)."""
    dims = []
    for (nx, ny), b in polygon.constraint_edges():
        nxq = max(Fraction(0), Fraction(nx))
        nyq = max(Fraction(0), Fraction(ny))
        cap = Fraction(b)
        if shrink:
            cap *= CAP_SHRINK
        dims.append((nxq, nyq, cap))
    return dims


def _proj(dims, d: ComplexDemand) -> tuple[Fraction, ...]:
    return tuple(nx * d.re + ny * d.im for nx, ny, _ in dims)


def _pgz_range_dp(instance: Instance, guessed: GuessedSet, polygon: Polygon,
                  eps: Fraction, state_budget: int) -> PgzResult | None:
    dims = _rational_dims(polygon)
    caps = [c for _, _, c in dims]
    for d in guessed.demands:
        p = _proj(dims, d)
        caps = [c - x for c, x in zip(caps, p)]
    if any(c < 0 for c in caps):
        return None
    fixed = dict(zip(guessed.members, guessed.entry_indices))
    free = [p for p in range(instance.n) if p not in fixed]
    if not free:
        total = guessed.d_T
        if total.mag_sq() > instance.capacity ** 2:
            return None
        indices = [0] * instance.n
        for p, i in fixed.items():
            indices[p] = i
        alloc = Allocation.from_entries(instance, indices)
        return PgzResult(welfare(instance, alloc), alloc)

    users = [make_user(p, [(_proj(dims, e.demand), e.value)
                           for e in instance.users[p].nonzero_entries()],
                       dims=len(dims))
             for p in free]
    sub = MdkpInstance(tuple(users), tuple(caps))
    universe = sorted({_proj(dims, e.demand)
                       for u in instance.users for e in u.entries})
    res = optimize_restricted_range(sub, eps, universe=universe,
                                    state_budget=state_budget)

    choices: list[Choice | None] = [None] * instance.n
    for p, i in fixed.items():
        choices[p] = Choice(instance.users[p].entries[i].demand, i)
    base_val = sum((instance.users[p].entries[i].value
                    for p, i in fixed.items()), Fraction(0))
    for j, p in enumerate(free):
        vec = res.vectors[j]
        val = res.per_user_values[j]
        widx = _projection_witness(instance.users[p], dims, vec, val)
        choices[p] = Choice(instance.users[p].entries[widx].demand, widx)
    alloc = Allocation(tuple(choices))
    if not feasible_total(alloc.total, instance.capacity):
        return None  # fp slack exhausted the shrink margin; drop the guess
    return PgzResult(base_val + res.welfare, alloc)


def _projection_witness(user: DemandSet, dims, vec, val: Fraction) -> int:
    if val == 0:
        return 0
    for idx, e in enumerate(user.entries):
        if e.value == val and all(p <= x for p, x in zip(_proj(dims, e.demand), vec)):
            return idx
    raise AssertionError("no projection witness")  # pragma: no cover


# --- Lemma-style witness construction ---------------------------------------


@dataclass(frozen=True)
class WitnessResult:
    members: tuple[int, ...]              # user positions whose demands form T
    demands: tuple[ComplexDemand, ...]
    allocation: Allocation
    polygon: Polygon
    removed: tuple[int, ...]              # zeroed user positions


def construct_witness(instance: Instance, allocation: Allocation,
                      eps: Fraction) -> WitnessResult:
    """Reduce a feasible allocation to one packing into some P_T(eps).

    Returns T with |T| <= 1/eps, an allocation that zeroes at most one
    minimum-value large demand or one minimum-value small group, and the
    polygon certifying membership of the new total.
    """
    q = _check_eps(eps)
    if not feasible_total(allocation.total, instance.capacity):
        raise PreconditionViolated("allocation must be feasible at beta = 1")
    items = [(pos, c.point) for pos, c in enumerate(allocation.choices)
             if not c.point.is_zero()]
    values = {pos: v for pos, v in enumerate(
        _allocation_values(instance, allocation))}
    capacity = instance.capacity

    in_T: list[tuple[int, ComplexDemand]] = []   # in addition order
    in_T_set: set[int] = set()
    while True:
        d_T = ZERO_DEMAND
        for _, d in in_T:
            d_T = d_T + d
        w_r, w_i = slack_widths(d_T, capacity)
        thr_r = float(eps) * w_r / 4.0
        thr_i = float(eps) * w_i / 4.0
        fresh = [(pos, d) for pos, d in items if pos not in in_T_set
                 and (float(d.re) > thr_r or float(d.im) > thr_i)]
        for pos, d in fresh:
            in_T.append((pos, d))
            in_T_set.add(pos)
        remaining = [(pos, d) for pos, d in items if pos not in in_T_set]
        if len(in_T) >= q or not fresh or not remaining:
            break

    remaining = [(pos, d) for pos, d in items if pos not in in_T_set]
    total = allocation.total
    if len(in_T) <= q:
        polygon = build_polygon([d for _, d in in_T], capacity, eps)
        if not remaining or contains(polygon, total):
            return WitnessResult(tuple(p for p, _ in in_T),
                                 tuple(d for _, d in in_T),
                                 allocation, polygon, ())

    if len(in_T) >= q:
        kept = in_T[:q]
        groups = [[pos for pos, _ in items if pos not in {p for p, _ in kept}]]
    else:
        kept = in_T
        polygon = build_polygon([d for _, d in kept], capacity, eps)
        w_r, w_i = polygon.widths
        groups = _partition_positions(remaining, w_r, w_i, eps)

    group_vals = [sum((values[p] for p in g), Fraction(0)) for g in groups]
    j_hat = min(range(len(groups)), key=lambda j: (group_vals[j], j))
    min_member = min(kept, key=lambda it: (values[it[0]], it[0])) if kept else None

    if min_member is not None and values[min_member[0]] < group_vals[j_hat]:
        removed = (min_member[0],)
        kept = [(p, d) for p, d in kept if p != min_member[0]]
    else:
        removed = tuple(groups[j_hat])

    removed_set = set(removed)
    new_choices = tuple(
        Choice(ZERO_DEMAND, 0 if c.entry_index is not None else None)
        if pos in removed_set else c
        for pos, c in enumerate(allocation.choices))
    new_alloc = Allocation(new_choices)
    polygon = build_polygon([d for _, d in kept], capacity, eps)
    return WitnessResult(tuple(p for p, _ in kept), tuple(d for _, d in kept),
                         new_alloc, polygon, removed)


def _allocation_values(instance: Instance, allocation: Allocation):
    vals = []
    for user, c in zip(instance.users, allocation.choices):
        if c.entry_index is not None:
            vals.append(user.entries[c.entry_index].value)
        else:
            vals.append(extended_value(user, c.point))
    return vals


def _partition_positions(remaining: list[tuple[int, ComplexDemand]],
                         w_r: float, w_i: float, eps: Fraction) -> list[list[int]]:
    kap_r = sum(float(d.re) for _, d in remaining)
    kap_i = sum(float(d.im) for _, d in remaining)
    ratio_r = kap_r / w_r if w_r > 0 else float("inf")
    ratio_i = kap_i / w_i if w_i > 0 else float("inf")
    axis_r = ratio_r >= ratio_i
    width = w_r if axis_r else w_i
    coord: Callable[[ComplexDemand], float] = \
        (lambda d: float(d.re)) if axis_r else (lambda d: float(d.im))
    batches = _greedy_batches([(pos, coord(d)) for pos, d in remaining],
                              float(eps) * width / 2.0)
    if len(batches) >= 2:
        batches[-2].extend(batches[-1])
        batches.pop()
    return batches


def _greedy_batches(items: list[tuple[int, float]],
                    threshold: float) -> list[list[int]]:
    """Maximal consecutive batches with per-batch sum <= threshold."""
    batches: list[list[int]] = []
    cur: list[int] = []
    cur_sum = 0.0
    for pos, x in items:
        if cur and cur_sum + x > threshold:
            batches.append(cur)
            cur, cur_sum = [], 0.0
        cur.append(pos)
        cur_sum += x
    if cur:
        batches.append(cur)
    return batches


def partition_small(demands: Sequence[ComplexDemand], w_r: float, w_i: float,
                    eps: Fraction) -> list[list[ComplexDemand]]:
    """Partition small demands into groups, each large along one axis.

    Preconditions follow the packing lemma: every demand is small on both
    axes, and the aggregate is large (>= w/2) along at least one axis.
    """
    tol_r = 1e-12 * max(1.0, w_r)
    tol_i = 1e-12 * max(1.0, w_i)
    thr_r = float(eps) * w_r / 4.0
    thr_i = float(eps) * w_i / 4.0
    for d in demands:
        if float(d.re) > thr_r + tol_r or float(d.im) > thr_i + tol_i:
            raise PreconditionViolated("demand too large for the partition lemma")
    kap_r = sum(float(d.re) for d in demands)
    kap_i = sum(float(d.im) for d in demands)
    if kap_r < w_r / 2.0 - tol_r and kap_i < w_i / 2.0 - tol_i:
        raise PreconditionViolated("aggregate is small on both axes")
    indexed = list(enumerate(demands))
    groups = _partition_positions(indexed, w_r, w_i, eps)
    return [[demands[i] for i in g] for g in groups]


# --- truthful range ----------------------------------------------------------


class TruthfulRangeDescriptor:
    """Declaration-independent range data for the truthful PTAS.

    cells are (T, z) pairs: T a set of universe demands (|T| <= 1/eps'),
    z in G(T); the polygon of a cell is built from T plus the dummy demand
    z - d_T, i.e. from aggregate z. All coordinates live in the rotated
    frame (exact rational rotation).
    """

    def __init__(self, universe: Sequence[ComplexDemand], capacity: Fraction,
                 eps: Fraction, delta, rotation: RationalRotation,
                 eps_scaled: Fraction, side_cap: int | None,
                 cells: list[tuple[tuple[ComplexDemand, ...],
                                   tuple[Fraction, Fraction]]]):
        self.universe = tuple(universe)          # rotated, nonzero, sorted
        self.capacity = capacity
        self.eps = eps
        self.delta = delta
        self.rotation = rotation
        self.eps_scaled = eps_scaled
        self.side_cap = side_cap
        self.cells = cells
        self._materialized: list | None = None
        self._decl_ids: dict = {}
        self._proj_cache: dict = {}
        self._ext_cache: dict = {}
        self._cand_cache: dict = {}

    def range_id(self) -> str:
        return (f"truthful-ptas(eps={self.eps}, eps'={self.eps_scaled}, "
                f"delta={self.delta}, cells={len(self.cells)}, "
                f"side_cap={self.side_cap})")


def assume_bound(rotation: RationalRotation) -> Fraction:
    """Upper bound on eps from the rotated-cone assumption: 2/(1+2cot^2 γ)."""
    return Fraction(2) / (1 + 2 * rotation.cot_sq())


def scaled_eps(eps: Fraction, rotation: RationalRotation) -> Fraction:
    """Rescale eps (only if necessary) and floor to a unit fraction."""
    bound = assume_bound(rotation)
    if eps <= bound:
        return eps
    target = eps * bound
    return Fraction(1, math.ceil(Fraction(1) / target))


def build_truthful_range(universe: Sequence[ComplexDemand], capacity: Fraction,
                         eps: Fraction, delta, side_cap: int | None = None,
                         cell_budget: int = 5000) -> TruthfulRangeDescriptor:
    """Enumerate (T, z in G(T)) cells over a demand universe.

    universe holds original-frame demands; they are rotated exactly before
    any geometry. Depends only on the demand universe, never on values.
    """
    rotation = rotation_for_delta(Fraction(delta) if not isinstance(delta, float)
                                  else Fraction(delta).limit_denominator(10 ** 9))
    rotated = sorted({rotation.apply(d) for d in universe if not d.is_zero()})
    for d in rotated:
        if d.re < 0 or d.im < 0 or d.re * rotation.cos < d.im * rotation.sin:
            raise PreconditionViolated(
                "universe demand outside the rotated cone [γ, π/2-γ]")
    epsp = scaled_eps(eps, rotation)
    _check_eps(epsp)
    q = epsp.denominator
    csq = capacity * capacity

    cells = []
    for size in range(0, min(len(rotated), q) + 1):
        for T in itertools.combinations(rotated, size):
            d_T = ZERO_DEMAND
            for d in T:
                d_T = d_T + d
            if d_T.mag_sq() > csq:
                continue
            if d_T.mag_sq() == csq:
                points = [(d_T.re, d_T.im)]
            else:
                points = candidate_points(T, capacity, epsp)
            for z in points:
                cells.append((T, z))
                if len(cells) > cell_budget:
                    raise BudgetExceeded("truthful range cell budget exhausted")
    return TruthfulRangeDescriptor(rotated, capacity, eps, delta, rotation,
                                   epsp, side_cap, cells)


@dataclass(frozen=True)
class TruthfulCellData:
    """Materialized geometry of one (T, z) cell."""

    key: tuple
    dummy: ComplexDemand                       # z - d_T, rotated frame
    dims: tuple[tuple[Fraction, Fraction], ...]  # unit normals (rationalized)
    caps: tuple[Fraction, ...]                 # after dummy consumption
    inner_cells: tuple[tuple[RangeCell, tuple[ComplexDemand, ...]], ...]


@dataclass(frozen=True)
class TruthfulAward:
    """Per-user outcome in the projected space of one cell."""

    dims: tuple[tuple[Fraction, Fraction], ...]
    vector: tuple[Fraction, ...]


@dataclass(frozen=True)
class TruthfulResult:
    welfare: Fraction
    allocation: Allocation
    per_user_values: tuple[Fraction, ...]
    awards: tuple[TruthfulAward, ...]
    cell_key: tuple
    descriptor: TruthfulRangeDescriptor


def _materialize_cells(desc: TruthfulRangeDescriptor, n: int,
                       inner_cell_budget: int) -> list[TruthfulCellData]:
    if desc._materialized is not None:
        return desc._materialized
    out = []
    for T, z in desc.cells:
        d_T = ZERO_DEMAND
        for d in T:
            d_T = d_T + d
        zd = ComplexDemand(z[0], z[1])
        dummy = zd - d_T
        polygon = build_polygon([zd], desc.capacity, desc.eps_scaled,
                                desc.side_cap)
        dims = _rational_dims(polygon)
        caps = [c for _, _, c in dims]
        dproj = _proj(dims, dummy)
        caps = [c - x for c, x in zip(caps, dproj)]
        if any(c < 0 for c in caps):
            continue
        norms = tuple((nx, ny) for nx, ny, _ in dims)
        uni = [ZERO_DEMAND, *desc.universe]
        inner = []
        work = 0
        max_fixed = min(n, math.floor(Fraction(len(dims)) / desc.eps_scaled))
        for size in range(0, max_fixed + 1):
            for members in itertools.combinations(range(n), size):
                for fixed_pts in itertools.product(uni, repeat=size):
                    vecs = tuple(_proj(dims, p) for p in fixed_pts)
                    tot = [sum(v[i] for v in vecs) for i in range(len(dims))] \
                        if size else [Fraction(0)] * len(dims)
                    if any(t > c for t, c in zip(tot, caps)):
                        continue
                    if size == n:
                        cell = RangeCell(n, members, vecs, None, 0)
                    else:
                        b = unit_vector(tuple(tot), tuple(caps), n, size)
                        cell = RangeCell(n, members, vecs, b, (n - size) ** 2)
                    inner.append((cell, fixed_pts))
                    work += 1
                    if work > inner_cell_budget:
                        raise BudgetExceeded("inner range cell budget exhausted")
        key = (tuple((d.re, d.im) for d in T), z)
        out.append(TruthfulCellData(key, dummy, norms, tuple(caps),
                                    tuple(inner)))
    desc._materialized = out
    return out


def solve_truthful_ptas(instance: Instance, eps: Fraction, delta,
                        side_cap: int | None = None,
                        descriptor: TruthfulRangeDescriptor | None = None,
                        cell_budget: int = 5000,
                        inner_cell_budget: int = 20000,
                        state_budget: int = 10 ** 7,
                        parallel: bool = False) -> TruthfulResult:
    """MIR argmax over the truthful range, with Clarke-ready determinism.

    When descriptor is given it is reused verbatim (the mechanism path:
    the range must stay fixed while values change).
    """
    if not instance.first_quadrant():
        raise PreconditionViolated("truthful PTAS requires the first quadrant")
    if descriptor is None:
        universe = sorted({e.demand for u in instance.users
                           for e in u.nonzero_entries()})
        descriptor = build_truthful_range(universe, instance.capacity, eps,
                                          delta, side_cap, cell_budget)
    rot = descriptor.rotation
    rotated_users = []
    for u in instance.users:
        ents = []
        for e in u.nonzero_entries():
            r = rot.apply(e.demand)
            if r.re < 0 or r.im < 0 or r.re * rot.cos < r.im * rot.sin:
                raise PreconditionViolated(
                    f"user {u.user_id}: demand outside the rotated cone")
            ents.append((r, e.value, e.demand))
        rotated_users.append(ents)

    cells = _materialize_cells(descriptor, instance.n, inner_cell_budget)
    if not cells:
        raise BudgetExceeded("truthful range is empty")
    entry_keys = [u.entries for u in instance.users]
    decl_ids = []
    for key in entry_keys:
        did = descriptor._decl_ids.get(key)
        if did is None:
            did = len(descriptor._decl_ids)
            descriptor._decl_ids[key] = did
        decl_ids.append(did)
    maxvals = [max(e.value for e in u.entries) for u in instance.users]

    def cell_projs(ci: int, cell: TruthfulCellData):
        dims3 = tuple((nx, ny, Fraction(0)) for nx, ny in cell.dims)
        projs = []
        for pos in range(instance.n):
            key = (ci, decl_ids[pos])
            hit = descriptor._proj_cache.get(key)
            if hit is None:
                hit = tuple((_proj(dims3, r), v) for r, v, _ in rotated_users[pos])
                descriptor._proj_cache[key] = hit
            projs.append(hit)
        return projs

    def base_value(ci: int, ii: int, member: int, vec, projs) -> Fraction:
        ck = (ci, ii, member, decl_ids[member])
        val = descriptor._ext_cache.get(ck)
        if val is None:
            val = Fraction(0)
            for pv, v in projs[member]:
                if v > val and all(a <= b for a, b in zip(pv, vec)):
                    val = v
            descriptor._ext_cache[ck] = val
        return val

    def candidates(ci: int, ii: int, pos: int, inner, projs):
        ck = (ci, ii, pos, decl_ids[pos])
        cl = descriptor._cand_cache.get(ck)
        if cl is None:
            cl = unit_candidates(projs[pos], inner.b, inner.unit_cap)
            descriptor._cand_cache[ck] = cl
        return cl

    def scan(chunk) -> tuple[Fraction, int, int] | None:
        # welfare-only sweep with an upper-bound prune; the prune never skips
        # a strict improvement, so the (welfare, ci, ii)-argmax is unchanged
        best: tuple[Fraction, int, int] | None = None
        for ci, cell in chunk:
            projs = cell_projs(ci, cell)
            for ii, (inner, _) in enumerate(cell.inner_cells):
                base = Fraction(0)
                for member, vec in zip(inner.members, inner.fixed):
                    base += base_value(ci, ii, member, vec, projs)
                free = [p for p in range(instance.n) if p not in inner.members]
                ub = base + sum((maxvals[p] for p in free), Fraction(0))
                if best is not None and ub <= best[0]:
                    continue
                gained = Fraction(0)
                if free:
                    cands = [candidates(ci, ii, p, inner, projs) for p in free]
                    solver = _CellSolver(free, cands, inner.unit_cap,
                                         len(cell.dims), state_budget)
                    gained = solver.value(0, solver.full)
                w = base + gained
                if best is None or w > best[0]:
                    best = (w, ci, ii)
        return best

    indexed = list(enumerate(cells))
    if parallel:
        chunks = [indexed[i::4] for i in range(4)]
        with ThreadPoolExecutor(max_workers=4) as pool:
            chunk_bests = list(pool.map(scan, chunks))
    else:
        chunk_bests = [scan(indexed)]
    found = [b for b in chunk_bests if b is not None]
    if not found:  # pragma: no cover - the empty cell always solves
        raise BudgetExceeded("no solvable cell")
    best_w = max(b[0] for b in found)
    bci, bii = min((b[1], b[2]) for b in found if b[0] == best_w)

    best_cell = cells[bci]
    inner, fixed_pts = best_cell.inner_cells[bii]
    projs = cell_projs(bci, best_cell)
    vectors: list = [None] * instance.n
    values: list = [None] * instance.n
    for member, vec in zip(inner.members, inner.fixed):
        vectors[member] = vec
        values[member] = base_value(bci, bii, member, vec, projs)
    free = [p for p in range(instance.n) if p not in inner.members]
    if free:
        cands = [candidates(bci, bii, p, inner, projs) for p in free]
        solver = _CellSolver(free, cands, inner.unit_cap, len(best_cell.dims),
                             state_budget)
        _, chosen = solver.solve()
        for p, r in zip(free, chosen):
            vec = tuple(ri * bi for ri, bi in zip(r, inner.b))
            vectors[p] = vec
            best_v = Fraction(0)
            for pv, v in projs[p]:
                if v > best_v and all(a <= b for a, b in zip(pv, vec)):
                    best_v = v
            values[p] = best_v
    res = RangeOptResult(best_w, tuple(vectors), tuple(values), inner)
    if res.welfare != sum(values, Fraction(0)):  # pragma: no cover
        raise AssertionError("cell welfare mismatch")

    fixed_map = dict(zip(inner.members, fixed_pts))
    inv = rot.inverse()
    choices: list[Choice] = []
    awards: list[TruthfulAward] = []
    for pos in range(instance.n):
        vec = res.vectors[pos]
        awards.append(TruthfulAward(best_cell.dims, vec))
        if pos in fixed_map:
            point = inv.apply(fixed_map[pos])
            choices.append(Choice(point, None))
        else:
            val = res.per_user_values[pos]
            widx = 0
            if val > 0:
                dims3 = tuple((nx, ny, Fraction(0)) for nx, ny in best_cell.dims)
                for idx, e in enumerate(instance.users[pos].entries):
                    if e.value == val and all(
                            p <= x for p, x in
                            zip(_proj(dims3, rot.apply(e.demand)), vec)):
                        widx = idx
                        break
            choices.append(Choice(instance.users[pos].entries[widx].demand, widx))
    allocation = Allocation(tuple(choices))
    if not feasible_total(allocation.total, instance.capacity):
        raise AssertionError("truthful range emitted an infeasible allocation")
    return TruthfulResult(res.welfare, allocation, res.per_user_values,
                          tuple(awards), best_cell.key, descriptor)
