"""Command-line experiment runner.

    agentsel run mesh-10-100 --reps 3 --out results/
    agentsel compare hier-30-500 mesh-30-500 ring-30 --reps 10
    agentsel stats --a results/mesh-30-500-r*.csv --b results/hier-30-500-r*.csv
    agentsel audit mesh-30-500-fail-8 --reps 2
    agentsel audit --fuzz 1000

Scenarios are canned names (see ``agentsel run --list``) or YAML paths.
Exit status is 1 when any invariant violation is found, 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import compare_csvs, compare_topologies, failure_report
from .fuzz import check_case
from .runner import infeasible_against_survivors, run_scenario
from .scenario import ConfigError, Scenario, canned_scenarios, load_scenario

log = logging.getLogger("agentsel")


def _load(name: str, args) -> Scenario:
    sc = load_scenario(name)
    if args.seed is not None:
        sc.seed = args.seed
    if sc.long_running and not args.long:
        raise ConfigError(f"{sc.name} is marked long-running; pass --long to run it")
    return sc


def _reps(sc: Scenario, args) -> int:
    return args.reps if args.reps is not None else sc.repetitions


def cmd_run(args) -> int:
    if args.list:
        print("\n".join(canned_scenarios()))
        return 0
    if not args.scenario:
        raise ConfigError("run: a scenario is required")
    bad = 0
    for name in args.scenario:
        sc = _load(name, args)
        if args.trace:
            sc.trace = True
        for rep in range(_reps(sc, args)):
            r = run_scenario(sc, rep, args.out)
            s = r.summary
            sel = s["selection_s"]
            print(f"{sc.name} rep {rep}: {s['complete']}/{s['jobs']} complete, "
                  f"{s['infeasible']} infeasible, end={r.end_reason}, "
                  f"selection mean={_ms(sel['mean'])} p95={_ms(sel['p95'])} p99={_ms(sel['p99'])}, "
                  f"msgs/job={s['messages_per_job']:.1f}, entropy={s['leader_entropy']}")
            if args.json:
                print(json.dumps(s, indent=2, sort_keys=True))
            for v in r.violations:
                print(f"  VIOLATION {v}")
            bad += len(r.violations)
    return 1 if bad else 0


def _ms(v) -> str:
    return "n/a" if v is None else f"{v * 1e3:.3f}ms"


def cmd_compare(args) -> int:
    scs = [_load(n, args) for n in args.scenario]
    reps = args.reps if args.reps is not None else min(sc.repetitions for sc in scs)
    cmp = compare_topologies(scs, reps, args.out)
    print(cmp.table())
    return 1 if cmp.violations and args.strict else 0


def cmd_stats(args) -> int:
    res = compare_csvs(args.a, args.b, args.column, args.unit, args.alpha)
    print(res.text())
    return 0


def cmd_audit(args) -> int:
    bad = 0
    if args.fuzz:
        unsafe = 0
        for seed in range(args.fuzz_start, args.fuzz_start + args.fuzz):
            rep = check_case(seed)
            if not rep.safe:
                unsafe += 1
                print(f"seed {seed}: UNSAFE {rep.violations[:3]} {rep.double_commits[:3]}")
        print(f"safety: {args.fuzz - unsafe}/{args.fuzz} cases with a single commit per job")
        bad += unsafe
    for name in args.scenario:
        sc = _load(name, args)
        reps = _reps(sc, args)
        if sc.schedule.crashes:
            rep = failure_report(sc, reps, fallback=not args.no_fallback, out_dir=args.out)
            print(rep.text())
            bad += len(rep.violations) + sum(len(x) for x in rep.incomplete_feasible)
            continue
        for i in range(reps):
            a = run_scenario(sc, i, args.out)
            b = run_scenario(sc, i)
            same = a.metrics_csv == b.metrics_csv and a.selections_csv == b.selections_csv
            infeasible = infeasible_against_survivors(a)
            print(f"{sc.name} rep {i}: violations={len(a.violations)} deterministic={same} "
                  f"incomplete-but-feasible={len(infeasible)}")
            for v in a.violations:
                print(f"  VIOLATION {v}")
            bad += len(a.violations) + (0 if same else 1)
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agentsel", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, many=True):
        sp.add_argument("scenario", nargs="*" if many else 1, help="canned name or YAML path")
        sp.add_argument("--reps", type=int, help="repetitions (default: scenario's own)")
        sp.add_argument("--seed", type=int, help="override the scenario seed base")
        sp.add_argument("--out", type=Path, help="directory for CSV/JSON outputs")
        sp.add_argument("--long", action="store_true", help="allow long-running scenarios")

    r = sub.add_parser("run", help="run scenarios and export metrics")
    common(r)
    r.add_argument("--list", action="store_true", help="list canned scenarios")
    r.add_argument("--json", action="store_true", help="print the full summary")
    r.add_argument("--trace", action="store_true", help="also write an event trace")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("compare", help="mean ± std selection time and messages per scenario")
    common(c)
    c.add_argument("--strict", action="store_true", help="exit 1 on a trend violation")
    c.set_defaults(fn=cmd_compare)

    s = sub.add_parser("stats", help="two-tailed t-test and Cohen's d over metrics CSVs")
    s.add_argument("--a", nargs="+", required=True, type=Path)
    s.add_argument("--b", nargs="+", required=True, type=Path)
    s.add_argument("--column", default="selection_s")
    s.add_argument("--unit", choices=("run", "job"), default="run")
    s.add_argument("--alpha", type=float, default=0.05)
    s.set_defaults(fn=cmd_stats)

    a = sub.add_parser("audit", help="re-check invariants, determinism and resilience")
    common(a)
    a.add_argument("--fuzz", type=int, default=0, help="also run N randomized safety cases")
    a.add_argument("--fuzz-start", type=int, default=0)
    a.add_argument("--no-fallback", action="store_true",
                   help="skip the extra run with the channel fast path disabled")
    a.set_defaults(fn=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, KeyError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
