"""Command line entry point: ``tdmpol run|sweep|envelope|report``."""
import argparse
import csv
import os
import sys

from .detection import NoPilotPower, PowerOutOfRange, mean_power_of_schedule
from .engine import ClockFailure
from .metrics import (EmptySamples, InsufficientSamples, chirp_excursion_report, run_scenario, summary_stats,
                      sweep, write_summary_csv)
from .scenario import ConfigError, load_scenario
from .tdm import ENVELOPE_0V, NoDarkWindowFound, write_envelope_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _values(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None


def _scenario(args):
    cfg = load_scenario(args.scenario)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.duration is not None:
        kw["duration_ms"] = args.duration
    return cfg.with_(**kw) if kw else cfg


def _progress(quiet):
    if quiet:
        return None
    last = [-1]

    def report(done, total):
        pct = (100 * done) // total
        if pct // 10 != last[0]:
            last[0] = pct // 10
            print(f"  {done}/{total} frames", file=sys.stderr)

    return report


def _print_table(rows, cols):
    widths = [max(len(c), *(len(_cell(r.get(c, ""))) for r in rows)) for c in cols]
    print("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
    for r in rows:
        print("  ".join(_cell(r.get(c, "")).rjust(w) for c, w in zip(cols, widths)))


def _cell(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


TABLE_COLUMNS = ("axis", "value", "frames", "rie0_max", "rie0_median", "rie45_max", "rie45_median", "error")


def cmd_run(args):
    cfg = _scenario(args)
    out = args.out or "out"
    art = run_scenario(cfg, out, progress=_progress(args.quiet))
    row = {"axis": "run", "value": 0.0, "error": ""}
    row.update(summary_stats(art.rie))
    _print_table([row], TABLE_COLUMNS)
    return EXIT_OK


def cmd_sweep(args):
    cfg = _scenario(args)
    rows = sweep(cfg, args.axis, args.values, out_dir=args.out or "out")
    _print_table(rows, TABLE_COLUMNS)
    return EXIT_OK


def cmd_envelope(args):
    dt = 0.1 if args.fine_dt else 1.0
    out = args.out or "out"
    os.makedirs(out, exist_ok=True)
    write_envelope_csv(os.path.join(out, "envelope.csv"), ENVELOPE_0V, dt=dt)
    return EXIT_OK


def _read_summary(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            if k not in ("axis", "error"):
                try:
                    r[k] = float(v)
                except (TypeError, ValueError):
                    pass
        r["source"] = os.path.dirname(path) or "."
    return rows


def _scenario_report(path):
    cfg = load_scenario(path)
    row = {
        "scenario": os.path.basename(path),
        "frames": cfg.n_frames,
        "received_peak_dbm": cfg.received_peak_dbm,
        "received_mean_dbm": mean_power_of_schedule(cfg.schedule, cfg.received_peak_dbm),
        "chirp_excursion_rad": chirp_excursion_report(cfg) if cfg.dgd_ps > 0 else 0.0,
    }
    return row


def cmd_report(args):
    summaries, scenarios = [], []
    for p in args.paths:
        if os.path.isdir(p):
            f = os.path.join(p, "summary.csv")
            if not os.path.exists(f):
                raise ConfigError(f"{p}: no summary.csv")
            summaries.extend(_read_summary(f))
        elif p.endswith(".csv"):
            summaries.extend(_read_summary(p))
        else:
            scenarios.append(_scenario_report(p))
    if scenarios:
        _print_table(scenarios, ("scenario", "frames", "received_peak_dbm", "received_mean_dbm",
                                 "chirp_excursion_rad"))
    if summaries:
        if scenarios:
            print()
        _print_table(summaries, ("source",) + TABLE_COLUMNS)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            write_summary_csv(os.path.join(args.out, "summary.csv"), summaries)
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: ./out)")
    common.add_argument("--quiet", action="store_true", help="no progress messages")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("scenario", help="scenario INI file")
    scen.add_argument("--seed", type=int, help="override the scenario seed")
    scen.add_argument("--duration", type=float, help="measured duration in ms")

    p = argparse.ArgumentParser(prog="tdmpol", description="TDM pilot-tone polarization tracking simulator")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common, scen], help="simulate one scenario")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", parents=[common, scen], help="repeat a scenario over a parameter grid")
    s.add_argument("--axis", required=True, help="scrambling_rate, dgd or any numeric scenario field")
    s.add_argument("--values", required=True, type=_values, help="comma or space separated grid")
    s.set_defaults(func=cmd_sweep)
    e = sub.add_parser("envelope", parents=[common], help="dump the laser gate fall as envelope.csv")
    e.add_argument("--fine-dt", action="store_true", help="0.1 ns resolution instead of 1 ns")
    e.set_defaults(func=cmd_envelope)
    rp = sub.add_parser("report", parents=[common], help="tabulate summaries and scenario budgets")
    rp.add_argument("paths", nargs="+", help="output directories, summary CSVs or scenario files")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PowerOutOfRange, NoPilotPower) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ClockFailure, NoDarkWindowFound, RuntimeError, ArithmeticError, OSError,
            EmptySamples, InsufficientSamples) as e:
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
