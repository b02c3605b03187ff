"""Instance/result file formats.

All numbers are exact rational strings ("p/q" or "p"); binary64 never appears
in files except the runtime field. Parsing is strict: malformed documents
raise ParseError (CLI exit code 2).
"""

from __future__ import annotations

import json
from fractions import Fraction
from typing import Any

from .core import (Allocation, ComplexDemand, DemandSet, Instance, Quadrant,
                   extended_value, feasible_total, welfare)
from .errors import InfeasibleError, ParseError


def rational_str(x: Fraction) -> str:
    return str(x)


def parse_rational(s: Any) -> Fraction:
    if isinstance(s, bool) or not isinstance(s, (str, int)):
        raise ParseError(f"expected rational string, got {s!r}")
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise ParseError(f"bad rational {s!r}: {exc}") from exc


def parse_instance(doc: Any) -> Instance:
    if not isinstance(doc, dict):
        raise ParseError("instance document must be an object")
    try:
        capacity = parse_rational(doc["capacity"])
        users_doc = doc["users"]
    except KeyError as exc:
        raise ParseError(f"missing field {exc}") from exc
    if not isinstance(users_doc, list):
        raise ParseError("users must be a list")
    users = []
    for u in users_doc:
        try:
            uid = int(u["id"])
            entries = [(ComplexDemand(parse_rational(d["re"]),
                                      parse_rational(d["im"])),
                        parse_rational(d["value"]))
                       for d in u["demands"]]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad user record: {exc}") from exc
        try:
            users.append(DemandSet.build(uid, entries))
        except ValueError as exc:
            raise ParseError(str(exc)) from exc
    try:
        return Instance(capacity, tuple(users))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def serialize_instance(instance: Instance, metadata: dict | None = None) -> dict:
    doc = {
        "capacity": rational_str(instance.capacity),
        "users": [
            {
                "id": u.user_id,
                "demands": [
                    {"re": rational_str(e.demand.re),
                     "im": rational_str(e.demand.im),
                     "value": rational_str(e.value)}
                    for e in u.entries
                ],
            }
            for u in instance.users
        ],
    }
    if metadata:
        doc["metadata"] = metadata
    return doc


def load_instance(path: str) -> Instance:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read instance {path}: {exc}") from exc
    return parse_instance(doc)


def dump_json(doc: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def make_result(algorithm: str, parameters: dict, instance: Instance,
                allocation: Allocation, runtime_ms: int,
                payments: tuple[Fraction, ...] | None = None,
                counts: dict | None = None) -> dict:
    w = welfare(instance, allocation)
    total = allocation.total
    violation_sq = total.mag_sq() / (instance.capacity ** 2)
    return {
        "algorithm": algorithm,
        "parameters": parameters,
        "choices": [c.entry_index for c in allocation.choices],
        "points": [[rational_str(c.point.re), rational_str(c.point.im)]
                   for c in allocation.choices],
        "welfare": rational_str(w),
        "total": [rational_str(total.re), rational_str(total.im)],
        "violation_sq": rational_str(violation_sq),
        "payments": None if payments is None
        else [rational_str(p) for p in payments],
        "counts": counts or {},
        "runtime_ms": runtime_ms,
    }


def verify_result(instance: Instance, result: Any, beta: Fraction) -> None:
    """Exact re-check of feasibility, welfare, and payment sign.

    Raises InfeasibleError on any mismatch (CLI exit code 3).
    """
    if not isinstance(result, dict):
        raise ParseError("result document must be an object")
    try:
        points = [ComplexDemand(parse_rational(p[0]), parse_rational(p[1]))
                  for p in result["points"]]
        choices = result["choices"]
        claimed_welfare = parse_rational(result["welfare"])
        claimed_total = ComplexDemand(parse_rational(result["total"][0]),
                                      parse_rational(result["total"][1]))
        claimed_violation = parse_rational(result["violation_sq"])
    except (KeyError, IndexError, TypeError) as exc:
        raise ParseError(f"bad result document: {exc}") from exc
    if len(points) != instance.n or len(choices) != instance.n:
        raise InfeasibleError("result size does not match instance")

    total = ComplexDemand(Fraction(0), Fraction(0))
    w = Fraction(0)
    for user, point, idx in zip(instance.users, points, choices):
        if idx is not None:
            entry = user.entries[idx]
            if entry.demand != point:
                raise InfeasibleError(
                    f"user {user.user_id}: point disagrees with entry index")
            w += entry.value
        else:
            w += extended_value(user, point)
        total = total + point
    if total != claimed_total:
        raise InfeasibleError("total mismatch")
    if w != claimed_welfare:
        raise InfeasibleError("welfare mismatch")
    if total.mag_sq() / (instance.capacity ** 2) != claimed_violation:
        raise InfeasibleError("violation certificate mismatch")
    if not feasible_total(total, instance.capacity, beta):
        raise InfeasibleError(f"allocation infeasible at beta={beta}")
    payments = result.get("payments")
    if payments is not None:
        for p in payments:
            if parse_rational(p) < 0:
                raise InfeasibleError("negative payment")
