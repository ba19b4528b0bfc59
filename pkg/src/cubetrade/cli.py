"""Command-line entry point: simulate, economics and reproduce."""

from __future__ import annotations

import argparse
import sys
from decimal import Decimal, InvalidOperation

from . import __version__
from .economics import CostModel, cost_curve, min_data_price, write_curve_csv
from .errors import CubeTradeError, ReportIOError, ScenarioParseError, ValidationErrors
from .reproduce import TARGETS, reproduce
from .scenario import emit_report, load_scenario, run_scenario

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_TOLERANCE = 2


def _gwei(text: str) -> Decimal:
    try:
        d = Decimal(text)
    except InvalidOperation:
        raise argparse.ArgumentTypeError(f"not a decimal gas price: {text!r}")
    if d <= 0:
        raise argparse.ArgumentTypeError("gas price must be positive")
    return d


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cubetrade", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario file end to end")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument("--out", default="out")
    sim.add_argument("--format", choices=("json", "csv"), default="json")
    sim.add_argument("--workers", type=_positive, default=1)
    sim.add_argument("--export-log", action="store_true", help="also write the broker log as traffic.log")

    eco = sub.add_parser("economics", help="settlement cost calculations")
    eco_sub = eco.add_subparsers(dest="action", required=True)
    mp = eco_sub.add_parser("min-price", help="break-even price per message")
    mp.add_argument("--mode", choices=("plain", "oraclize"), required=True)
    mp.add_argument("--settlements", type=_positive, required=True)
    mp.add_argument("--data", type=_positive, required=True)
    mp.add_argument("--gas-price-gwei", type=_gwei, default=Decimal("0.9"))
    mp.add_argument("--amortized", action="store_true", help="include deployment, spread over the data")

    cv = eco_sub.add_parser("curve", help="cost against gas price, as CSV")
    cv.add_argument("--mode", choices=("plain", "oraclize"), required=True)
    cv.add_argument("--from-gwei", type=_gwei, default=Decimal("0.9"))
    cv.add_argument("--to-gwei", type=_gwei, default=Decimal("20"))
    cv.add_argument("--steps", type=_positive, default=20)
    cv.add_argument("--settlements", type=_positive, default=1)
    cv.add_argument("--data", type=_positive, default=1)
    cv.add_argument("--amortized", action="store_true")
    cv.add_argument("--out", default=None, help="CSV path; stdout when omitted")

    rep = sub.add_parser("reproduce", help="compare computed costs with the published figures")
    rep.add_argument("which", choices=TARGETS)
    return parser


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    report = run_scenario(scenario, seed=args.seed, workers=args.workers)
    for path in emit_report(report, args.format, args.out, export_log=args.export_log):
        print(path)
    totals = report.totals()
    print(f"fees_paid_wei={totals['fees_paid_wei']} disputes={totals['inequalities']} "
          f"unsettleable={totals['unsettleable_pairs']} fingerprint={report.fingerprint}")
    return EXIT_OK


def _model(args) -> CostModel:
    factory = CostModel.amortized if args.amortized else CostModel.standalone
    return factory(args.mode)


def _cmd_economics(args) -> int:
    model = _model(args)
    if args.action == "min-price":
        q = min_data_price(model.at_gas_price(args.gas_price_gwei), args.settlements, args.data)
        print(f"mode={q.mode.value} settlements={q.n_settlements} data={q.n_data} "
              f"gas_price_gwei={args.gas_price_gwei}")
        print(f"eth_per_datum={float(q.ether):.6e}")
        print(f"usd_per_datum={float(q.usd):.6e}")
        return EXIT_OK
    if args.steps < 2:
        raise ValueError("--steps must be at least 2")
    points = cost_curve(model, args.settlements, args.data, (args.from_gwei, args.to_gwei), args.steps)
    write_curve_csv(points, args.out if args.out else sys.stdout)
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    rows = reproduce(args.which)
    for c in rows:
        print(c.row())
    failed = sum(not c.passed for c in rows)
    print(f"{len(rows) - failed}/{len(rows)} within tolerance")
    return EXIT_OK if not failed else EXIT_TOLERANCE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"simulate": _cmd_simulate, "economics": _cmd_economics, "reproduce": _cmd_reproduce}
    try:
        return handlers[args.command](args)
    except ScenarioParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ValidationErrors as exc:
        print(f"error: scenario has {len(exc.errors)} problem(s):", file=sys.stderr)
        for e in exc.errors:
            print(f"  - {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (ReportIOError, CubeTradeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
