"""Maximal-in-range mechanisms with Clarke (VCG) payments, plus an audit.

A mechanism wraps a deterministic range optimizer. Payments use the zero-out
form of the Clarke pivot: p_k = (range optimum with k's values zeroed) minus
(others' declared welfare at the chosen allocation); n+1 optimizer calls per
run.

audit_truthfulness is a falsification harness, not a proof: it enumerates a
finite misreport lattice (entry subsets, value-grid reassignments, demand
inflation within the declared universe) and compares exact utilities. The
range structure of each optimizer is fixed against the *true* instance's
declared universe, which is also what keeps the enumerated misreports inside
the supported valuation class.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .core import (Allocation, DemandSet, Entry, Instance, Quadrant,
                   ZERO_DEMAND, extended_value, prec_leq)
from .fptas import solve_bifptas
from .mdkp import (MdkpEntry, MdkpInstance, MdkpUser, m_extended_value,
                   optimize_restricted_range, vec_leq)
from .oracle import brute_force_opt
from .ptas import (TruthfulAward, TruthfulRangeDescriptor, _proj,
                   build_truthful_range, solve_truthful_ptas)


@dataclass(frozen=True)
class MirOutcome:
    welfare: Fraction
    per_user_values: tuple[Fraction, ...]   # declared values at the outcome
    awards: tuple                           # opaque per-user award objects
    allocation: object                      # Allocation or vector tuple


@dataclass(frozen=True)
class MechanismOutcome:
    allocation: object
    payments: tuple[Fraction, ...]
    welfare: Fraction
    per_user_values: tuple[Fraction, ...]
    range_id: str


class FptasMechanism:
    """MIR over the rounded guess-tuple range of the bi-criteria FPTAS.

    P must be the a-priori parameter (declaration-independent); pn_mode
    "auto" would leak declarations into the range.
    """

    def __init__(self, eps: Fraction, P: Fraction, parallel: bool = False):
        self.eps = eps
        self.P = P
        self.parallel = parallel

    def range_id(self) -> str:
        return f"fptas(eps={self.eps}, P={self.P})"

    def solve(self, instance: Instance) -> MirOutcome:
        res = solve_bifptas(instance, self.eps, P=self.P, range_mode="grid",
                            parallel=self.parallel)
        return MirOutcome(res.welfare, res.per_user_values, res.grid_points,
                          res.allocation)

    @staticmethod
    def zero_user(instance: Instance, k: int) -> Instance:
        return _zero_ckp_user(instance, k)

    @staticmethod
    def award_value(truth: DemandSet, award) -> Fraction:
        # award is the signed grid point; its worth is the best true entry
        # it dominates (grids are axis-aligned, so dominance is exact here).
        return extended_value(truth, award)


class RestrictedRangeMechanism:
    """MIR over the unit-grid restricted range of an m-dim instance.

    The cell universe is frozen at construction (from the true declarations),
    so re-solves under misreports keep the range fixed.
    """

    def __init__(self, eps: Fraction, universe: Sequence | None = None,
                 state_budget: int = 10 ** 7, parallel: bool = False):
        self.eps = eps
        self.universe = universe
        self.state_budget = state_budget
        self.parallel = parallel

    def range_id(self) -> str:
        return f"restricted-range(eps={self.eps})"

    def bind(self, instance: MdkpInstance) -> "RestrictedRangeMechanism":
        if self.universe is None:
            self.universe = instance.universe()
        return self

    def solve(self, instance: MdkpInstance) -> MirOutcome:
        universe = self.universe if self.universe is not None \
            else instance.universe()
        res = optimize_restricted_range(instance, self.eps, universe=universe,
                                        state_budget=self.state_budget,
                                        parallel=self.parallel)
        return MirOutcome(res.welfare, res.per_user_values, res.vectors,
                          res.vectors)

    @staticmethod
    def zero_user(instance: MdkpInstance, k: int) -> MdkpInstance:
        users = list(instance.users)
        users[k] = MdkpUser(users[k].user_id,
                            tuple(MdkpEntry(e.vector, Fraction(0))
                                  for e in users[k].entries))
        return MdkpInstance(tuple(users), instance.capacity)

    @staticmethod
    def award_value(truth: MdkpUser, award) -> Fraction:
        return m_extended_value(truth, award)


class TruthfulPtasMechanism:
    """MIR over the (T, z in G(T)) cell range with the side-cap test hook.

    Utilities are evaluated in the per-cell projected outcome space with
    rotated-frame dominance (the valuation class the range serves); physical
    awards are value-equal witness entries.
    """

    def __init__(self, eps: Fraction, delta, side_cap: int | None = 3,
                 cell_budget: int = 5000, inner_cell_budget: int = 20000,
                 state_budget: int = 10 ** 7, parallel: bool = False):
        self.eps = eps
        self.delta = delta
        self.side_cap = side_cap
        self.cell_budget = cell_budget
        self.inner_cell_budget = inner_cell_budget
        self.state_budget = state_budget
        self.parallel = parallel
        self.descriptor: TruthfulRangeDescriptor | None = None

    def bind(self, instance: Instance) -> "TruthfulPtasMechanism":
        universe = sorted({e.demand for u in instance.users
                           for e in u.nonzero_entries()})
        self.descriptor = build_truthful_range(
            universe, instance.capacity, self.eps, self.delta, self.side_cap,
            self.cell_budget)
        return self

    def range_id(self) -> str:
        if self.descriptor is None:
            return f"truthful-ptas(eps={self.eps}, delta={self.delta})"
        return self.descriptor.range_id()

    def solve(self, instance: Instance) -> MirOutcome:
        res = solve_truthful_ptas(
            instance, self.eps, self.delta, self.side_cap,
            descriptor=self.descriptor, cell_budget=self.cell_budget,
            inner_cell_budget=self.inner_cell_budget,
            state_budget=self.state_budget, parallel=self.parallel)
        if self.descriptor is None:
            self.descriptor = res.descriptor
        return MirOutcome(res.welfare, res.per_user_values, res.awards,
                          res.allocation)

    @staticmethod
    def zero_user(instance: Instance, k: int) -> Instance:
        return _zero_ckp_user(instance, k)

    def award_value(self, truth: DemandSet, award: TruthfulAward) -> Fraction:
        rot = self.descriptor.rotation
        dims3 = tuple((nx, ny, Fraction(0)) for nx, ny in award.dims)
        best = Fraction(0)
        for e in truth.entries:
            if e.value > best and all(
                    p <= x for p, x in
                    zip(_proj(dims3, rot.apply(e.demand)), award.vector)):
                best = e.value
        return best


def _zero_ckp_user(instance: Instance, k: int) -> Instance:
    users = list(instance.users)
    u = users[k]
    users[k] = DemandSet(u.user_id,
                         tuple(Entry(e.demand, Fraction(0)) for e in u.entries),
                         u.quadrant)
    return Instance(instance.capacity, tuple(users))


def run_mechanism(instance, optimizer) -> MechanismOutcome:
    """Range argmax plus Clarke payments via n + 1 optimizer calls."""
    if hasattr(optimizer, "bind"):
        optimizer.bind(instance)
    base = optimizer.solve(instance)
    n = len(base.per_user_values)
    payments = []
    for k in range(n):
        others_opt = optimizer.solve(optimizer.zero_user(instance, k)).welfare
        others_at_chosen = base.welfare - base.per_user_values[k]
        payments.append(others_opt - others_at_chosen)
    return MechanismOutcome(base.allocation, tuple(payments), base.welfare,
                            base.per_user_values, optimizer.range_id())


@dataclass(frozen=True)
class Violation:
    user: int
    truthful_utility: Fraction
    misreport_utility: Fraction
    misreport: object


@dataclass
class AuditReport:
    violations: list[Violation] = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _ckp_misreports(instance: Instance, k: int,
                    value_grid: Sequence[int]) -> list[DemandSet]:
    """Entry subsets x value grid, plus single-entry inflation swaps."""
    truth = instance.users[k]
    nonzero = truth.nonzero_entries()
    universe = sorted({e.demand for u in instance.users
                       for e in u.nonzero_entries()})
    out: list[DemandSet] = []
    for r in range(len(nonzero) + 1):
        for subset in itertools.combinations(nonzero, r):
            for vals in itertools.product(value_grid, repeat=r):
                out.append(DemandSet.build(
                    truth.user_id,
                    [(e.demand, Fraction(v)) for e, v in zip(subset, vals)],
                    truth.quadrant))
    for i, e in enumerate(nonzero):
        for dom in universe:
            if dom != e.demand and prec_leq(e.demand, dom):
                swapped = list(nonzero)
                swapped[i] = Entry(dom, e.value)
                out.append(DemandSet.build(
                    truth.user_id, [(s.demand, s.value) for s in swapped],
                    truth.quadrant))
    return out


def _mdkp_misreports(instance: MdkpInstance, k: int,
                     value_grid: Sequence[int]) -> list[MdkpUser]:
    truth = instance.users[k]
    nonzero = truth.entries[1:]
    universe = sorted({e.vector for u in instance.users for e in u.entries})
    dims = instance.dims
    zero = MdkpEntry(tuple(Fraction(0) for _ in range(dims)), Fraction(0))
    out: list[MdkpUser] = []
    for r in range(len(nonzero) + 1):
        for subset in itertools.combinations(nonzero, r):
            for vals in itertools.product(value_grid, repeat=r):
                ents = tuple(MdkpEntry(e.vector, Fraction(v))
                             for e, v in zip(subset, vals))
                out.append(MdkpUser(truth.user_id, (zero, *ents)))
    for i, e in enumerate(nonzero):
        for dom in universe:
            if dom != e.vector and vec_leq(e.vector, dom):
                swapped = list(nonzero)
                swapped[i] = MdkpEntry(dom, e.value)
                out.append(MdkpUser(truth.user_id, (zero, *swapped)))
    return out


def _replace_user(instance, k: int, new_user):
    if isinstance(instance, Instance):
        users = list(instance.users)
        users[k] = new_user
        return Instance(instance.capacity, tuple(users))
    users = list(instance.users)
    users[k] = new_user
    return MdkpInstance(tuple(users), instance.capacity)


def audit_truthfulness(instance, optimizer, value_grid: Sequence[int] = range(11),
                       parallel: bool = False) -> AuditReport:
    """Exhaustive misreport audit; an empty violation list means 'not falsified'."""
    if hasattr(optimizer, "bind"):
        optimizer.bind(instance)
    base = optimizer.solve(instance)
    n = len(base.per_user_values)
    others_opt = [optimizer.solve(optimizer.zero_user(instance, k)).welfare
                  for k in range(n)]

    def truthful_utility(k: int) -> Fraction:
        truth = instance.users[k]
        value = optimizer.award_value(truth, base.awards[k])
        payment = others_opt[k] - (base.welfare - base.per_user_values[k])
        return value - payment

    if isinstance(instance, Instance):
        misreports = {k: _ckp_misreports(instance, k, value_grid)
                      for k in range(n)}
    else:
        misreports = {k: _mdkp_misreports(instance, k, value_grid)
                      for k in range(n)}

    tasks = [(k, lie) for k in range(n) for lie in misreports[k]]

    def check(task) -> Violation | None:
        k, lie = task
        truth = instance.users[k]
        lied = _replace_user(instance, k, lie)
        out = optimizer.solve(lied)
        payment = others_opt[k] - (out.welfare - out.per_user_values[k])
        utility = optimizer.award_value(truth, out.awards[k]) - payment
        if utility > truthful_utility(k):
            return Violation(k, truthful_utility(k), utility, lie)
        return None

    if parallel:
        with ThreadPoolExecutor(max_workers=4) as pool:
            found = list(pool.map(check, tasks))
    else:
        found = [check(t) for t in tasks]
    report = AuditReport(checked=len(tasks))
    report.violations = [v for v in found if v is not None]
    return report


def social_efficiency_ratio(instance: Instance, welfare: Fraction,
                            beta: Fraction = Fraction(1)) -> Fraction:
    """welfare / oracle OPT as an exact rational (1 when both are zero)."""
    opt, _ = brute_force_opt(instance, beta)
    if opt == 0:
        return Fraction(1) if welfare == 0 else Fraction(10 ** 9)
    return welfare / opt
