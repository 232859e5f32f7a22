"""Command-line entry point: ``mergesim run | compare | validate | scenarios``.

Exit codes: 0 success, 1 I/O failure, 2 scenario or report error,
3 safety violation detected.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .engine import detect_collisions, run
from .metrics import (MetricsError, compare, export_trace, read_report, summary_lines,
                      travel_metrics, write_report)
from .scenario import MODES, ScenarioError, bundled_scenarios, load_scenario_file

EXIT_OK, EXIT_SCENARIO, EXIT_SAFETY = 0, 2, 3


def _cmd_run(args) -> int:
    sc = load_scenario_file(args.scenario).with_overrides(mode=args.mode, seed=args.seed, dt=args.dt)
    trace = run(sc)
    out = Path(args.out_dir)
    export_trace(trace, args.format, out)
    report = travel_metrics(trace)
    write_report(report, out / "report.json")
    violations = detect_collisions(trace)
    with (out / "violations.jsonl").open("w") as fh:
        for v in violations:
            fh.write(json.dumps({"tick": v.tick, "type": v.type, "vehicle_id": v.vehicle_id,
                                 "payload": v.payload}, sort_keys=True) + "\n")
    print("\n".join(summary_lines(report)))
    print(f"outputs written to {out}")
    if violations:
        print(f"{len(violations)} safety violation(s); see violations.jsonl", file=sys.stderr)
        return EXIT_SAFETY
    return EXIT_OK


def _cmd_compare(args) -> int:
    summary = compare(read_report(args.report), read_report(args.baseline))
    text = json.dumps(summary, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_validate(args) -> int:
    sc = load_scenario_file(args.scenario)
    print(f"ok: {sc.name} ({len(sc.vehicles)} vehicles, {len(sc.roads)} roads, mode={sc.mode})")
    return EXIT_OK


def _cmd_scenarios(args) -> int:
    print("\n".join(bundled_scenarios()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mergesim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write trace, events and report")
    p.add_argument("--scenario", required=True, help="scenario YAML path or bundled name")
    p.add_argument("--mode", choices=MODES, help="override the scenario's control mode")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--dt", type=float, help="override the world tick [s]")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="percent savings of one report against a baseline report")
    p.add_argument("report")
    p.add_argument("baseline")
    p.add_argument("--out", help="also write the summary JSON here")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("validate", help="load and check a scenario without running it")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("scenarios", help="list bundled scenarios")
    p.set_defaults(func=_cmd_scenarios)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except MetricsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
