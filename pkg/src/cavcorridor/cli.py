"""Command-line entry point.

    cavsim run <config> [--mode optimal|baseline|both] [--out DIR] [--sample-dt S]
    cavsim compare <config> [--out DIR] [--sample-dt S]
    cavsim validate <config>

Exit codes: 0 success, 1 configuration error, 2 scheduling or solver
infeasibility, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import load_config
from .errors import ConfigError, ScheduleInfeasibleError, TrajectorySolverError
from .output import write_results
from .simulator import run_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cavsim",
                     description="corridor coordination simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", parents=[], help="simulate one scenario")
    run_p.add_argument("config")
    run_p.add_argument("--mode", choices=("optimal", "baseline", "both"),
                       default=None, help="default: the config's modes list")
    run_p.add_argument("--out", default="out")
    run_p.add_argument("--sample-dt", type=float, default=None)

    cmp_p = sub.add_parser("compare",
                           help="run both modes and report differences")
    cmp_p.add_argument("config")
    cmp_p.add_argument("--out", default="out")
    cmp_p.add_argument("--sample-dt", type=float, default=None)

    val_p = sub.add_parser("validate", help="check a scenario file")
    val_p.add_argument("config")
    return parser


def _run_mode(cfg, mode, out_dir, sample_dt):
    result = run_scenario(cfg.corridor, cfg.arrivals, cfg.routes, mode=mode,
                          sample_dt=sample_dt)
    write_results(result, out_dir)
    m = result.metrics.__dict__
    print(f"[{mode}] {len(result.records)} vehicles:"
          f" mean travel time {m['mean_travel_time']:.2f} s,"
          f" mean effort {m['mean_effort']:.4f},"
          f" stop-and-go {m['total_stop_and_go']}"
          f" -> {out_dir}")
    return result


def _pct_change(new, old):
    if old == 0:
        return 0.0 if new == 0 else float("inf")
    return 100.0 * (new - old) / old


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as err:
        for msg in err.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(f"{args.config}: ok ({len(cfg.arrivals)} arrivals,"
              f" {len(cfg.corridor.zones)} zones,"
              f" {len(cfg.routes)} routes)")
        return EXIT_OK

    sample_dt = args.sample_dt if args.sample_dt else cfg.sample_dt
    try:
        if args.command == "run":
            if args.mode is None:
                modes = cfg.modes
            elif args.mode == "both":
                modes = ("optimal", "baseline")
            else:
                modes = (args.mode,)
            for mode in modes:
                out_dir = (os.path.join(args.out, mode)
                           if len(modes) > 1 else args.out)
                _run_mode(cfg, mode, out_dir, sample_dt)
            return EXIT_OK

        # compare
        res_opt = _run_mode(cfg, "optimal",
                            os.path.join(args.out, "optimal"), sample_dt)
        res_base = _run_mode(cfg, "baseline",
                             os.path.join(args.out, "baseline"), sample_dt)
        mo, mb = res_opt.metrics, res_base.metrics
        report = {
            "travel_time": {"optimal": mo.mean_travel_time,
                            "baseline": mb.mean_travel_time,
                            "change_pct": _pct_change(mo.mean_travel_time,
                                                      mb.mean_travel_time)},
            "effort": {"optimal": mo.mean_effort,
                       "baseline": mb.mean_effort,
                       "change_pct": _pct_change(mo.mean_effort,
                                                 mb.mean_effort)},
            "stop_and_go": {"optimal": mo.total_stop_and_go,
                            "baseline": mb.total_stop_and_go},
        }
        with open(os.path.join(args.out, "comparison.json"), "w",
                  newline="\n") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print("optimal vs baseline:"
              f" travel time {report['travel_time']['change_pct']:+.1f}%,"
              f" effort {report['effort']['change_pct']:+.1f}%,"
              f" stop-and-go {mo.total_stop_and_go} vs"
              f" {mb.total_stop_and_go}")
        return EXIT_OK
    except ConfigError as err:
        for msg in err.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except ScheduleInfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except TrajectorySolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
