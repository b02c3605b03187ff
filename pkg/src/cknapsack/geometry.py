"""Circle/grid/polygon machinery for the first-quadrant PTAS.

Construction runs in binary64 (square roots, hulls); everything that decides
feasibility downstream is re-verified with exact rationals, so fp error here
can cost welfare but never soundness. Grid line coordinates (multiples of
C/2^rho) and anchor points are kept exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .core import ComplexDemand, ZERO_DEMAND
from .errors import DegenerateSlack, PreconditionViolated

Point = tuple[float, float]

MEMBERSHIP_RTOL = 1e-9


@dataclass(frozen=True)
class GridLevels:
    rho1: int  # vertical lines, spacing C/2^rho1 along re
    rho2: int  # horizontal lines, spacing C/2^rho2 along im


@dataclass(frozen=True)
class Anchor:
    lambda1: int
    lambda2: int
    z: Point

    @property
    def z_exact(self) -> tuple[Fraction, Fraction]:
        raise AttributeError("use anchor_exact for exact coordinates")


def slack_widths(d_T: ComplexDemand, capacity: Fraction) -> tuple[float, float]:
    """(wR, wI): horizontal/vertical slack from the aggregate to the circle."""
    csq = capacity * capacity
    if d_T.mag_sq() > csq:
        raise PreconditionViolated("aggregate lies outside the circle")
    cf = float(capacity)
    re_f, im_f = d_T.as_floats()
    w_r = math.sqrt(max(0.0, cf * cf - im_f * im_f)) - re_f
    w_i = math.sqrt(max(0.0, cf * cf - re_f * re_f)) - im_f
    return (max(0.0, w_r), max(0.0, w_i))


def grid_levels(w_r: float, w_i: float, capacity: Fraction, eps: Fraction) -> GridLevels:
    """Smallest integers rho with C/2^rho1 <= eps*wR/4 and C/2^rho2 <= eps*wI/4."""
    if not (0 < eps <= Fraction(1, 4)):
        raise PreconditionViolated("grid levels need 0 < eps <= 1/4")
    if w_r <= 0.0 or w_i <= 0.0:
        raise DegenerateSlack("zero slack width: aggregate on the circle")
    return GridLevels(_min_level(w_r, capacity, eps), _min_level(w_i, capacity, eps))


def _min_level(width: float, capacity: Fraction, eps: Fraction) -> int:
    cf = float(capacity)
    target = float(eps) * width / 4.0
    rho = max(0, math.ceil(math.log2(cf / target)) - 2)
    while cf / (1 << rho) > target:
        rho += 1
    while rho > 0 and cf / (1 << (rho - 1)) <= target:
        rho -= 1
    return rho


def anchor_exact(d_T: ComplexDemand, capacity: Fraction,
                 levels: GridLevels) -> tuple[int, int, tuple[Fraction, Fraction]]:
    """Largest grid multiples below the aggregate and their intersection z_T."""
    s1 = capacity / (1 << levels.rho1)
    s2 = capacity / (1 << levels.rho2)
    lam1 = math.floor(d_T.re / s1)
    lam2 = math.floor(d_T.im / s2)
    return lam1, lam2, (lam1 * s1, lam2 * s2)


def anchor(d_T: ComplexDemand, capacity: Fraction, levels: GridLevels) -> Anchor:
    lam1, lam2, z = anchor_exact(d_T, capacity, levels)
    return Anchor(lam1, lam2, (float(z[0]), float(z[1])))


def project(mu: Point, nu: Point) -> Point:
    """Projection of mu on nu: (nu/|nu|^2)(mu·nu)."""
    norm_sq = nu[0] * nu[0] + nu[1] * nu[1]
    if norm_sq == 0.0:
        raise PreconditionViolated("cannot project onto the zero vector")
    scale = (mu[0] * nu[0] + mu[1] * nu[1]) / norm_sq
    return (scale * nu[0], scale * nu[1])


@dataclass(frozen=True)
class Polygon:
    """Convex region inscribed in the capacity circle, counterclockwise from 0.

    normals are outward unit vectors, one per edge; offsets are the distances
    of the edge lines from the origin (0 for the two axis edges). sigma_i is
    offsets[i] * normals[i].
    """

    vertices: tuple[Point, ...]
    normals: tuple[Point, ...]
    offsets: tuple[float, ...]
    capacity: Fraction
    eps: Fraction
    aggregate: ComplexDemand
    levels: GridLevels | None  # None for the degenerate (on-circle) fallback
    widths: tuple[float, float]
    degenerate: bool = False

    @property
    def sides(self) -> int:
        return len(self.normals)

    def sigma(self) -> tuple[Point, ...]:
        return tuple((b * n[0], b * n[1]) for n, b in zip(self.normals, self.offsets))

    def constraint_edges(self) -> list[tuple[Point, float]]:
        """Edges with positive offset: the binding dims of the projected knapsack."""
        scale = max(1.0, float(self.capacity))
        return [(n, b) for n, b in zip(self.normals, self.offsets)
                if b > 1e-12 * scale]


def contains(polygon: Polygon, x: Point | ComplexDemand,
             rtol: float = MEMBERSHIP_RTOL) -> bool:
    """Half-plane membership with relative tolerance (Lemma-style projections)."""
    if isinstance(x, ComplexDemand):
        x = x.as_floats()
    tol = rtol * max(1.0, float(polygon.capacity))
    for n, b in zip(polygon.normals, polygon.offsets):
        if n[0] * x[0] + n[1] * x[1] > b + tol:
            return False
    return True


def aggregate_of(T: Iterable[ComplexDemand]) -> ComplexDemand:
    total = ZERO_DEMAND
    for d in T:
        total = total + d
    return total


def build_polygon(T: Sequence[ComplexDemand], capacity: Fraction, eps: Fraction,
                  side_cap: int | None = None) -> Polygon:
    """Inscribed polygon for a guessed demand set T.

    side_cap, when given, bounds the number of positive-offset edges by
    dropping boundary grid vertices (shrinking the region; never a superset).
    """
    d_T = aggregate_of(T)
    csq = capacity * capacity
    mag = d_T.mag_sq()
    if mag > csq:
        raise PreconditionViolated("guessed set is infeasible")
    if mag == csq:
        return _degenerate_polygon(d_T, capacity, eps)

    w_r, w_i = slack_widths(d_T, capacity)
    if w_r <= 0.0 or w_i <= 0.0:
        # Strictly inside the circle but the slack underflows binary64.
        raise PreconditionViolated("slack width underflows binary64")
    levels = grid_levels(w_r, w_i, capacity, eps)
    _, _, z = anchor_exact(d_T, capacity, levels)
    cf = float(capacity)
    zx, zy = float(z[0]), float(z[1])

    y_top = math.sqrt(max(0.0, cf * cf - zx * zx))
    x_right = math.sqrt(max(0.0, cf * cf - zy * zy))
    pi1_prime = (0.0, y_top)
    pi1 = (zx, y_top)
    pi2 = (x_right, zy)
    pi2_prime = (x_right, 0.0)

    arc: list[Point] = []
    s1 = capacity / (1 << levels.rho1)
    s2 = capacity / (1 << levels.rho2)
    lam = math.floor(z[0] / s1)
    while True:
        x = float((lam) * s1)
        if x > cf:
            break
        y = cf * cf - x * x
        if y >= 0.0:
            y = math.sqrt(y)
            if y >= zy:
                arc.append((x, y))
            else:
                break
        else:
            break
        lam += 1
    mu = math.floor(z[1] / s2)
    while True:
        y = float((mu) * s2)
        if y > cf:
            break
        x = cf * cf - y * y
        if x >= 0.0:
            x = math.sqrt(x)
            if x >= zx:
                arc.append((x, y))
            else:
                break
        else:
            break
        mu += 1

    if side_cap is not None:
        arc = _subsample_arc(arc, pi1, pi2, side_cap)

    pts = [(0.0, 0.0), pi1_prime, pi1, pi2, pi2_prime] + arc
    hull = _convex_hull(pts)
    hull = _start_at_origin(hull)
    normals, offsets = _edge_normals(hull, capacity)
    return Polygon(tuple(hull), normals, offsets, capacity, eps, d_T, levels,
                   (w_r, w_i))


def _degenerate_polygon(d_T: ComplexDemand, capacity: Fraction,
                        eps: Fraction) -> Polygon:
    """Aggregate exactly on the circle: the only region is the dominated box."""
    re_f, im_f = d_T.as_floats()
    verts = [(0.0, 0.0)]
    if re_f > 0.0:
        verts.append((re_f, 0.0))
    if re_f > 0.0 or im_f > 0.0:
        verts.append((re_f, im_f))
    if im_f > 0.0:
        verts.append((0.0, im_f))
    normals = ((-1.0, 0.0), (0.0, -1.0), (1.0, 0.0), (0.0, 1.0))
    offsets = (0.0, 0.0, re_f, im_f)
    return Polygon(tuple(verts), normals, offsets, capacity, eps, d_T, None,
                   (0.0, 0.0), degenerate=True)


def _subsample_arc(arc: list[Point], pi1: Point, pi2: Point,
                   side_cap: int) -> list[Point]:
    if side_cap < 3:
        raise PreconditionViolated("side cap must be >= 3 constraint edges")
    interior = sorted(set(arc) - {pi1, pi2})
    keep = side_cap - 3  # base polygon already contributes 3 positive offsets
    if keep <= 0 or len(interior) <= keep:
        return interior if keep > 0 else []
    step = len(interior) / keep
    return [interior[min(len(interior) - 1, int(i * step))] for i in range(keep)]


def _convex_hull(points: list[Point]) -> list[Point]:
    """Monotone chain, counterclockwise, interior collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o: Point, a: Point, b: Point) -> float:
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _start_at_origin(hull: list[Point]) -> list[Point]:
    if (0.0, 0.0) in hull:
        i = hull.index((0.0, 0.0))
        return hull[i:] + hull[:i]
    return hull


def _edge_normals(hull: list[Point],
                  capacity: Fraction) -> tuple[tuple[Point, ...], tuple[float, ...]]:
    scale = max(1.0, float(capacity))
    normals: list[Point] = []
    offsets: list[float] = []
    m = len(hull)
    if m == 1:
        # single point (the origin): re <= 0 and im <= 0
        return ((1.0, 0.0), (0.0, 1.0)), (0.0, 0.0)
    if m == 2:
        a, b = hull
        ex, ey = b[0] - a[0], b[1] - a[1]
        norm = math.hypot(ex, ey)
        n1 = (ey / norm, -ex / norm)
        along = (ex / norm, ey / norm)
        cap = along[0] * b[0] + along[1] * b[1]
        return ((n1, (-n1[0], -n1[1]), along),
                (_clamp_offset(n1[0] * a[0] + n1[1] * a[1], scale),
                 _clamp_offset(-(n1[0] * a[0] + n1[1] * a[1]), scale),
                 _clamp_offset(cap, scale)))
    for i in range(m):
        a = hull[i]
        b = hull[(i + 1) % m]
        ex, ey = b[0] - a[0], b[1] - a[1]
        norm = math.hypot(ex, ey)
        n = (ey / norm, -ex / norm)
        offset = n[0] * a[0] + n[1] * a[1]
        normals.append(n)
        offsets.append(_clamp_offset(offset, scale))
    return tuple(normals), tuple(offsets)


def _clamp_offset(offset: float, scale: float) -> float:
    return 0.0 if abs(offset) < 1e-12 * scale else offset


def candidate_points(T: Sequence[ComplexDemand], capacity: Fraction,
                     eps: Fraction) -> list[tuple[Fraction, Fraction]]:
    """G(T): the aggregate plus minimal refined-grid points that bump a level.

    Case (a): exactly one of the two levels increments at the point; case (b):
    both do. Points are restricted to z ⪰ d_T (the dummy demand z - d_T must be
    a first-quadrant vector) and strictly inside the circle.
    """
    d_T = aggregate_of(T)
    w_r, w_i = slack_widths(d_T, capacity)
    levels = grid_levels(w_r, w_i, capacity, eps)
    s1 = capacity / (1 << (levels.rho1 + 1))
    s2 = capacity / (1 << (levels.rho2 + 1))
    csq = capacity * capacity

    case_a: list[tuple[Fraction, Fraction]] = []
    case_b: list[tuple[Fraction, Fraction]] = []
    i = math.ceil(d_T.re / s1)
    while True:
        x = i * s1
        if x * x + d_T.im * d_T.im > csq:
            break
        j = math.ceil(d_T.im / s2)
        while True:
            y = j * s2
            if x * x + y * y > csq:
                break
            z = ComplexDemand(x, y)
            if z.mag_sq() < csq:
                try:
                    zl = grid_levels(*slack_widths(z, capacity), capacity, eps)
                except DegenerateSlack:
                    zl = None
                if zl is not None:
                    bump1 = zl.rho1 == levels.rho1 + 1
                    bump2 = zl.rho2 == levels.rho2 + 1
                    if bump1 and bump2:
                        case_b.append((x, y))
                    elif bump1 != bump2 and (bump1 or bump2):
                        case_a.append((x, y))
            j += 1
        i += 1

    result = {(d_T.re, d_T.im)}
    result.update(_pareto_minimal(case_a))
    result.update(_pareto_minimal(case_b))
    return sorted(result)


def _pareto_minimal(points: list[tuple[Fraction, Fraction]]
                    ) -> list[tuple[Fraction, Fraction]]:
    """Componentwise-minimal elements (first-quadrant dominance order)."""
    best_y: Fraction | None = None
    minimal: list[tuple[Fraction, Fraction]] = []
    pts = sorted(set(points))
    idx = 0
    while idx < len(pts):
        x = pts[idx][0]
        group_min_y = pts[idx][1]
        if best_y is None or group_min_y < best_y:
            minimal.append((x, group_min_y))
            best_y = group_min_y
        while idx < len(pts) and pts[idx][0] == x:
            idx += 1
    return minimal
