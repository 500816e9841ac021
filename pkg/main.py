# main.py
"""
Command-line front end.

    python main.py run --preset fire-oven --out out/fire.jsonl
    python main.py run --config configs/example.toml --override protocol.vote_timeout_ms=30000
    python main.py range iv --csv-dir out/range
    python main.py power --capacity 107.98
    python main.py replicate --preset nodefail-2 --seeds 100
    python main.py presets

Exit codes: 0 completed, 1 configuration or usage error, 2 internal invariant violation.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import network_simulator
from errors import (
    ConfigInvalid,
    DutyViolation,
    EmergencyNetError,
    IllegalTransition,
    InvariantViolation,
    MissingColumn,
    NoLink,
    ParseError,
)
from power_model import (
    MEASURED_AVERAGES_MW,
    NO_SLEEP_AVERAGE_MW,
    REFERENCE_CAPACITY_WH,
    StageProfile,
    fit_cycle_model,
    power_table,
    variant_table,
)
from range_test import DEFAULT_GAP_MS, DEFAULT_LOOPS, DEFAULT_MESSAGES, RANGE_SCENARIOS, run_range_scenario
from replication import replicate
from report_generator import generate_pdf
from run_config import load_config
from scenario_presets import RANGE_PRESETS, is_range_preset, preset_names

logger = logging.getLogger("emergency_net")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INTERNAL = 2

DEVIATION_FLAG_PCT = 5.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _load(args):
    if not args.config and not args.preset:
        raise UsageError("one of --config or --preset is required")
    return load_config(args.config, args.preset, args.override)


def cmd_run(args):
    config = _load(args)
    seed = args.seed if args.seed is not None else config.seeds[0]
    result = network_simulator.run(config.topology(), config.script, config.node_configs(), seed,
                                   config.end_time_ms, config.node_thresholds(), config.simulation)
    summary = result.summary

    out = args.out or config.out
    if out:
        result.events.write(out)
        summary_path = Path(out).with_suffix(".summary.json")
        summary_path.write_text(json.dumps(summary.to_dict(), sort_keys=True, indent=2) + "\n")
        print(f"[📝] Event log: {out}  summary: {summary_path}")
    if args.pdf:
        generate_pdf(summary, args.pdf, config.name)
        print(f"[📄] Report: {args.pdf}")

    print(f"Run {config.name} seed={seed} end={config.end_time_ms / 1000:.1f}s")
    print(f"{'time_s':>8}  {'session':>8}  {'scenario':<11} {'total':>7}  decision")
    for s in summary.sessions:
        print(f"{s['time_ms'] / 1000:8.1f}  {s['session']:>8}  {s['scenario']:<11} "
              f"{s['total']:7.3f}  {'ACCEPT' if s['decision'] else 'reject'}"
              f"{' (rebalanced)' if s['rebalanced'] else ''}")
    msgs = summary.messages
    dropped = ", ".join(f"{k}={v}" for k, v in sorted(msgs["dropped"].items()) if v)
    print(f"messages: sent={msgs['sent']} delivered={msgs['delivered']} "
          f"in_flight={msgs['in_flight']} dropped: {dropped or 'none'}")
    print(f"accepted: {', '.join(summary.accepted) or 'none'}   "
          f"truth: {', '.join(summary.ground_truth) or 'none'}")
    if summary.false_positives or summary.false_negatives:
        print(f"[🚨] false positives: {summary.false_positives}  "
              f"false negatives: {summary.false_negatives}")
    return EXIT_OK


def cmd_range(args):
    scenario = RANGE_PRESETS.get(args.scenario, args.scenario)
    result = run_range_scenario(scenario, seed=args.seed or 0, messages=args.messages,
                                gap_ms=args.gap_ms, loops=args.loops)
    streams = sorted(result.counts)
    print(f"Range scenario {scenario}: {RANGE_SCENARIOS[scenario].description}")
    print("Loopcount," + ",".join(f"RecvMsg_{tx}->{rx}" for tx, rx in streams))
    for loop in range(result.loops):
        print(f"{loop + 1}," + ",".join(str(int(result.counts[s][loop])) for s in streams))
    for stream, row in result.summary().items():
        print(f"{stream}: mean={row['mean']:.1f} min={row['min']} ({row['rate'] * 100:.1f}%)")
    if args.csv_dir:
        for path in result.write_csv(args.csv_dir, RANGE_SCENARIOS[scenario].csv_name):
            print(f"[📝] {path}")
    return EXIT_OK


def cmd_power(args):
    profile = StageProfile()
    fitted = fit_cycle_model(MEASURED_AVERAGES_MW)
    capacities = args.capacity or [REFERENCE_CAPACITY_WH]
    rows = power_table(profile, fitted, capacities)

    print(f"fitted cycle: E_up={fitted.uptime_energy_mJ:.1f} mJ  T_up={fitted.uptime_s:.2f} s  "
          f"P_sleep={fitted.sleep_mW:.2f} mW")
    header = ["sleep_s", "profile_mW"] + ([] if args.no_fit else ["fitted_mW"])
    header += [k for k in rows[0] if k.startswith("lifetime")]
    print("  ".join(f"{h:>18}" for h in header))
    for row in rows:
        print("  ".join(f"{row[h]:>18.2f}" for h in header))

    measured = dict(MEASURED_AVERAGES_MW)
    measured[0.0] = NO_SLEEP_AVERAGE_MW
    for row in rows:
        ref = measured.get(row["sleep_s"])
        if ref is None:
            continue
        dev = (row["fitted_mW"] - ref) / ref * 100
        flag = "  [⚠] deviation" if abs(dev) > DEVIATION_FLAG_PCT else ""
        print(f"T={row['sleep_s']:g}s measured={ref:.2f} mW fitted={row['fitted_mW']:.2f} mW "
              f"({dev:+.1f}%){flag}")

    for row in variant_table(capacities):
        lifetimes = "  ".join(f"{k[len('lifetime_h@'):]}={v:.0f} h" for k, v in row.items()
                              if k.startswith("lifetime"))
        print(f"variant {row['variant']}: {row['average_mW']:.2f} mW  {lifetimes}")

    if args.csv:
        with open(args.csv, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"[📝] {args.csv}")
    return EXIT_OK


def cmd_replicate(args):
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    if args.preset and is_range_preset(args.preset):
        job = RANGE_PRESETS[args.preset]
        base = args.seed or 0
    else:
        job = _load(args)
        base = args.seed if args.seed is not None else job.seeds[0]
    rep = replicate(job, args.seeds, base_seed=base, workers=args.workers)

    print(f"{'metric':<22}{'n':>5}{'mean':>14}{'std':>14}{'ci95_low':>14}{'ci95_high':>14}")
    for metric, agg in rep.aggregates().items():
        print(f"{metric:<22}{agg.n:>5}{agg.mean:>14.4f}{agg.std:>14.4f}"
              f"{agg.ci_low:>14.4f}{agg.ci_high:>14.4f}")
    if rep.totals.runs:
        t = rep.totals.get_stats()
        print(f"messages over {rep.totals.runs} runs: sent={t['sent']} delivered={t['delivered']} "
              f"dropped={sum(t['dropped'].values())} in_flight={t['in_flight']}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n")
        print(f"[📝] {args.out}")
    return EXIT_OK


def cmd_presets(args):
    for name in preset_names():
        print(name)
    print("parameterized: fire-oven-K, gas-oven-K, earthquake-massdrop-K (K exposed), nodefail-K")
    return EXIT_OK


def parse_args(argv=None):
    parser = _Parser(description="Multi-node emergency detection simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def config_flags(p):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--preset", help="named preset (see the presets command)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, repeatable")
        p.add_argument("--seed", type=int, help="seed (default: first configured seed)")

    p = sub.add_parser("run", help="simulate one scenario")
    config_flags(p)
    p.add_argument("--out", help="JSON-lines event log path")
    p.add_argument("--pdf", help="write a PDF report")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("range", help="communication range test")
    p.add_argument("scenario", choices=sorted(RANGE_SCENARIOS) + sorted(RANGE_PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loops", type=int, default=DEFAULT_LOOPS)
    p.add_argument("--messages", type=int, default=DEFAULT_MESSAGES)
    p.add_argument("--gap-ms", type=int, default=DEFAULT_GAP_MS)
    p.add_argument("--csv-dir", help="write Loopcount,RecvMsg tables here")
    p.set_defaults(func=cmd_range)

    p = sub.add_parser("power", help="average power and battery lifetime table")
    p.add_argument("--capacity", type=float, action="append", metavar="WH",
                   help="battery capacity in Wh, repeatable")
    p.add_argument("--no-fit", action="store_true", help="hide the fitted-model column")
    p.add_argument("--csv", help="write the table as CSV")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("replicate", help="repeat a run over seeds and aggregate")
    config_flags(p)
    p.add_argument("--seeds", type=int, required=True, help="number of seeds")
    p.add_argument("--workers", type=int, help="worker threads")
    p.add_argument("--out", help="write per-seed metrics and aggregates as JSON")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("presets", help="list preset names")
    p.set_defaults(func=cmd_presets)

    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigInvalid, ParseError, MissingColumn, OSError) as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except (InvariantViolation, IllegalTransition, DutyViolation, NoLink) as e:
        logger.error("Internal invariant violated: %s", e)
        return EXIT_INTERNAL
    except EmergencyNetError as e:
        logger.exception("Run aborted: %s", e)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
