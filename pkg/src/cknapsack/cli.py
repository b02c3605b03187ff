"""Command-line front-end.

Subcommands: gen, solve, verify, audit, bench. Exit codes: 0 ok, 2 parse
error, 3 infeasible/verification failure, 4 budget/cap exhausted, 5 audit
found violations.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from fractions import Fraction

from .core import Instance
from .errors import (BudgetExceeded, CapExceeded, InfeasibleError, ParseError)
from .fptas import solve_bifptas
from .generators import gen_instance
from .io import (dump_json, load_instance, make_result, parse_rational,
                 rational_str, serialize_instance, verify_result)
from .mechanism import (FptasMechanism, TruthfulPtasMechanism,
                        audit_truthfulness, run_mechanism)
from .oracle import brute_force_opt
from .ptas import solve_ptas, solve_truthful_ptas

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_BUDGET = 4
EXIT_AUDIT = 5


def _parse_eps(s: str) -> Fraction:
    eps = parse_rational(s)
    if eps.numerator != 1:
        raise ParseError("epsilon must be a unit fraction 1/q")
    return eps


def _parse_delta(s: str):
    try:
        return Fraction(s)
    except ValueError:
        try:
            return Fraction(float(s)).limit_denominator(10 ** 9)
        except ValueError as exc:
            raise ParseError(f"bad delta {s!r}") from exc


def cmd_gen(args) -> int:
    instance = gen_instance(args.seed, args.n, args.k, args.phi_max_deg,
                            parse_rational(args.capacity))
    meta = {"seed": args.seed, "phi_max_deg": args.phi_max_deg,
            "tan_theta": rational_str(instance.tan_theta())}
    dump_json(serialize_instance(instance, meta), args.out)
    return EXIT_OK


def _solve_dispatch(args, instance: Instance):
    eps = _parse_eps(args.epsilon) if args.epsilon else None
    counts: dict = {}
    payments = None
    if args.algo == "exact":
        welfare, allocation = brute_force_opt(instance, parse_rational(args.beta),
                                              parallel=args.parallel)
        params = {"beta": args.beta}
    elif args.algo == "ptas":
        res = solve_ptas(instance, eps, backend=args.backend,
                         side_cap=args.side_cap, state_budget=args.budget,
                         parallel=args.parallel)
        allocation = res.allocation
        counts["guesses"] = res.guesses
        params = {"eps": str(eps), "backend": args.backend}
    elif args.algo == "ptas-truthful":
        delta = _parse_delta(args.delta)
        if args.payments:
            mech = TruthfulPtasMechanism(eps, delta, side_cap=args.side_cap,
                                         parallel=args.parallel)
            out = run_mechanism(instance, mech)
            allocation = out.allocation
            payments = out.payments
            counts["cells"] = len(mech.descriptor.cells)
        else:
            res = solve_truthful_ptas(instance, eps, delta,
                                      side_cap=args.side_cap,
                                      parallel=args.parallel)
            allocation = res.allocation
            counts["cells"] = len(res.descriptor.cells)
        params = {"eps": str(eps), "delta": args.delta,
                  "side_cap": args.side_cap}
    elif args.algo == "fptas":
        pn_mode = "auto" if args.pn == "auto" else "given"
        P = None if args.pn in (None, "auto") else parse_rational(args.pn)
        if args.payments:
            if pn_mode == "auto":
                raise ParseError("--payments requires a fixed --pn")
            mech = FptasMechanism(eps, P, parallel=args.parallel)
            out = run_mechanism(instance, mech)
            allocation = out.allocation
            payments = out.payments
        else:
            res = solve_bifptas(instance, eps, P=P, pn_mode=pn_mode,
                                parallel=args.parallel)
            allocation = res.allocation
            counts["guesses"] = res.guess_count
        params = {"eps": str(eps), "pn": args.pn}
    else:  # pragma: no cover - argparse choices guard this
        raise ParseError(f"unknown algorithm {args.algo}")
    return allocation, params, counts, payments


def cmd_solve(args) -> int:
    instance = load_instance(args.instance)
    t0 = time.perf_counter()
    allocation, params, counts, payments = _solve_dispatch(args, instance)
    runtime_ms = 0 if args.stable_output else \
        int((time.perf_counter() - t0) * 1000)
    doc = make_result(args.algo, params, instance, allocation, runtime_ms,
                      payments=payments, counts=counts)
    if args.out:
        dump_json(doc, args.out)
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        print()
    return EXIT_OK


def cmd_verify(args) -> int:
    instance = load_instance(args.instance)
    try:
        with open(args.result) as fh:
            result = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read result: {exc}") from exc
    verify_result(instance, result, parse_rational(args.beta))
    print("verify: ok")
    return EXIT_OK


def cmd_audit(args) -> int:
    instance = load_instance(args.instance)
    eps = _parse_eps(args.epsilon)
    if args.optimizer == "fptas":
        mech = FptasMechanism(eps, parse_rational(args.pn or "2"))
    else:
        mech = TruthfulPtasMechanism(eps, _parse_delta(args.delta),
                                     side_cap=args.side_cap)
    report = audit_truthfulness(instance, mech,
                                value_grid=range(args.value_grid_max + 1),
                                parallel=args.parallel)
    doc = {
        "optimizer": mech.range_id(),
        "checked": report.checked,
        "violations": [
            {"user": v.user,
             "truthful_utility": rational_str(v.truthful_utility),
             "misreport_utility": rational_str(v.misreport_utility)}
            for v in report.violations
        ],
    }
    if args.out:
        dump_json(doc, args.out)
    else:
        json.dump(doc, sys.stdout, indent=2, sort_keys=True)
        print()
    return EXIT_OK if report.ok else EXIT_AUDIT


def cmd_bench(args) -> int:
    eps = _parse_eps(args.epsilon)
    rows = []
    for path in args.instances:
        instance = load_instance(path)
        opt, _ = brute_force_opt(instance)
        for algo in args.algos.split(","):
            t0 = time.perf_counter()
            guesses = 0
            if algo == "exact":
                w, alloc = brute_force_opt(instance)
            elif algo == "ptas":
                res = solve_ptas(instance, eps)
                w, alloc, guesses = res.welfare, res.allocation, res.guesses
            elif algo == "fptas":
                pn = "auto" if args.pn == "auto" else None
                P = None if args.pn in (None, "auto") else parse_rational(args.pn)
                res = solve_bifptas(instance, eps, P=P,
                                    pn_mode="auto" if pn else "given")
                w, alloc, guesses = res.welfare, res.allocation, res.guess_count
            else:
                raise ParseError(f"bench does not support algo {algo!r}")
            runtime_ms = 0 if args.stable_output else \
                int((time.perf_counter() - t0) * 1000)
            ratio = w / opt if opt else Fraction(1)
            violation_sq = alloc.total.mag_sq() / instance.capacity ** 2
            rows.append([path, algo, str(eps), rational_str(w),
                         rational_str(opt), rational_str(ratio),
                         rational_str(violation_sq), guesses, runtime_ms])
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["instance", "algo", "eps", "welfare", "opt", "ratio",
                         "violation_sq", "guesses", "runtime_ms"])
        writer.writerows(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="ckp")
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a seeded instance file")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--k", type=int, default=2, help="nonzero entries per user")
    g.add_argument("--phi-max-deg", type=int, default=90)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--capacity", default="10")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve an instance file")
    s.add_argument("--algo", required=True,
                   choices=["exact", "ptas", "ptas-truthful", "fptas"])
    s.add_argument("--instance", required=True)
    s.add_argument("--out")
    s.add_argument("--epsilon", help="accuracy, a unit fraction like 1/5")
    s.add_argument("--delta", help="angle margin (radians) for ptas-truthful")
    s.add_argument("--pn", help="FPTAS P(n) value, or 'auto'")
    s.add_argument("--beta", default="1", help="capacity slack for --algo exact")
    s.add_argument("--backend", default="brute", choices=["brute", "range-dp"])
    s.add_argument("--side-cap", type=int, default=None)
    s.add_argument("--budget", type=int, default=10 ** 7)
    s.add_argument("--payments", action="store_true",
                   help="run the MIR+VCG mechanism and include payments")
    s.add_argument("--parallel", action="store_true")
    s.add_argument("--stable-output", action="store_true",
                   help="zero the runtime field for bitwise-reproducible files")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="re-check a result file exactly")
    v.add_argument("--instance", required=True)
    v.add_argument("--result", required=True)
    v.add_argument("--beta", default="1")
    v.set_defaults(func=cmd_verify)

    a = sub.add_parser("audit", help="truthfulness audit on an instance")
    a.add_argument("--instance", required=True)
    a.add_argument("--optimizer", default="fptas",
                   choices=["fptas", "ptas-truthful"])
    a.add_argument("--epsilon", required=True)
    a.add_argument("--delta", default="1")
    a.add_argument("--pn")
    a.add_argument("--side-cap", type=int, default=3)
    a.add_argument("--value-grid-max", type=int, default=10)
    a.add_argument("--parallel", action="store_true")
    a.add_argument("--out")
    a.set_defaults(func=cmd_audit)

    b = sub.add_parser("bench", help="emit a CSV comparing solvers")
    b.add_argument("--instances", nargs="+", required=True)
    b.add_argument("--algos", default="exact,ptas,fptas")
    b.add_argument("--epsilon", default="1/5")
    b.add_argument("--pn")
    b.add_argument("--out", required=True)
    b.add_argument("--stable-output", action="store_true")
    b.set_defaults(func=cmd_bench)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (BudgetExceeded, CapExceeded) as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
