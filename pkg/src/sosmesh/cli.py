"""Command-line entry point.

    sosmesh run       --scenario <path> --experiment {1|2|3} --seed <n> --reps <k> --out <dir>
    sosmesh validate  --scenario <path>
    sosmesh plot      --in <dir> --out <file>
    sosmesh calibrate --scenario <path> --target-loss <pct> --target-hops <float>
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path
from typing import Dict, List, Tuple

from .errors import MeshError
from .harness import (
    ExperimentPlan,
    MessageRecord,
    calibrate,
    emit_csv,
    emit_plot,
    read_csv,
    run_experiment,
)
from .scenario import load_scenario, render_scenario

_CSV_NAME = re.compile(r"^(?P<scenario>.+)_exp(?P<number>[123])\.csv$")


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario)
    plan = ExperimentPlan.for_experiment(args.experiment, seed=args.seed, repetitions=args.reps)
    result = run_experiment(config, plan)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = emit_csv(result, out_dir / f"{config.name}_exp{args.experiment}.csv")

    print(f"scenario {config.name}, experiment {args.experiment}: "
          f"{result.sent} requests over {plan.repetitions} repetition(s)")
    for key, value in result.summary().items():
        print(f"  {key:>20}: {value:.3f}")
    print(f"  wrote {csv_path}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario)
    roles = [spec.role for spec in config.nodes]
    print(
        f"{config.name}: OK ({len(config.nodes)} nodes: "
        f"{roles.count('relay')} relays, {roles.count('proxy_server')} proxy servers, "
        f"{roles.count('proxy_client') + roles.count('source')} proxy clients; "
        f"{config.floors} floors, {config.width} x {config.height} m)"
    )
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    results: Dict[Tuple[str, int], List[MessageRecord]] = {}
    for path in sorted(in_dir.glob("*.csv")):
        match = _CSV_NAME.match(path.name)
        if match is None:
            continue
        results[(match["scenario"], int(match["number"]))] = read_csv(path)
    if not results:
        print(f"no result CSVs matching <scenario>_exp<N>.csv under {in_dir}", file=sys.stderr)
        return 1
    out = emit_plot(results, args.out)
    print(f"wrote {out}")
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario)
    report = calibrate(config, args.target_loss, args.target_hops, seed=args.seed)
    out = Path(args.out) if args.out else Path(args.scenario).with_suffix(".calibrated.scn")
    out.write_text(render_scenario(report.config))
    print(report.summary())
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sosmesh",
        description="Flooding-mesh emergency messaging: simulate and measure scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment against a scenario")
    run.add_argument("--scenario", required=True)
    run.add_argument("--experiment", type=int, choices=(1, 2, 3), required=True)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--reps", type=int, default=5)
    run.add_argument("--out", required=True, help="directory for the result CSV")
    run.set_defaults(handler=_cmd_run)

    validate = sub.add_parser("validate", help="check a scenario file")
    validate.add_argument("--scenario", required=True)
    validate.set_defaults(handler=_cmd_validate)

    plot = sub.add_parser("plot", help="plot response times and loss from result CSVs")
    plot.add_argument("--in", dest="in_dir", required=True, help="directory of result CSVs")
    plot.add_argument("--out", required=True, help="output vector-graphics file (.svg)")
    plot.set_defaults(handler=_cmd_plot)

    cal = sub.add_parser("calibrate", help="tune radio parameters toward target metrics")
    cal.add_argument("--scenario", required=True)
    cal.add_argument("--target-loss", type=float, required=True, help="target loss in percent")
    cal.add_argument("--target-hops", type=float, required=True, help="target mean hop count")
    cal.add_argument("--seed", type=int, default=9)
    cal.add_argument("--out", help="where to write the calibrated scenario")
    cal.set_defaults(handler=_cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except MeshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
