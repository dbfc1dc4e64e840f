"""Command-line interface.

Subcommands: simulate (scenario runner), fit (constrained Grenander of a
data file), calibrate (streaming p-to-e conversion), experts enumerate
(grid class enumeration against its size bound).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

from .calibration import EProcess, make_calibrator, step
from .densities import BoundsAB
from .experts import ExpertGridParams, class_size_bound, enumerate_expert_class
from .grenander import WeightedCells, fit_constrained
from .sim import ScenarioConfig, run_experiment, write_outputs


def _read_floats(path: str):
    fh = sys.stdin if path == "-" else open(path)
    try:
        for line in fh:
            line = line.strip()
            if line:
                yield float(line)
    finally:
        if fh is not sys.stdin:
            fh.close()


def _cmd_simulate(args) -> int:
    with open(args.config) as fh:
        config = json.load(fh)
    scenario = ScenarioConfig.from_dict(config)
    result = run_experiment(scenario, workers=args.workers)
    paths = write_outputs(result, args.out)
    for p in paths:
        print(p)
    return 0


def _cmd_fit(args) -> int:
    xs = np.array(list(_read_floats(args.data)))
    hist = fit_constrained(WeightedCells.from_sample(xs), BoundsAB(args.a, args.b))
    json.dump(hist.to_dict(), sys.stdout)
    sys.stdout.write("\n")
    return 0


def _cmd_calibrate(args) -> int:
    config = {"kind": args.algo, "a": args.a, "b": args.b}
    if args.horizon is not None:
        config["horizon"] = args.horizon
    cal = make_calibrator(config)
    ep = EProcess(alpha=args.alpha)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["t", "p", "e", "log_M", "decision"])
    for p in _read_floats(args.stream):
        e, ep = step(cal, ep, p)
        decision = "rejected" if ep.rejected else "continuing"
        writer.writerow([ep.t, repr(p), repr(e), repr(ep.log_wealth), decision])
    if args.test_mode:
        return 1 if ep.rejected else 0
    return 0


def _cmd_experts_enumerate(args) -> int:
    params = ExpertGridParams(
        n=args.n, k=args.k, beta=args.beta, bounds=BoundsAB(args.a, args.b)
    )
    cls = enumerate_expert_class(params)
    out = {
        "params": params.to_dict(),
        "size": len(cls),
        "size_bound": class_size_bound(params),
        "experts": [e.to_dict() for e in cls],
    }
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="monodens",
        description="Online monotone density estimation and p-to-e calibration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario config and write CSV/JSON outputs")
    sim.add_argument("--config", required=True, help="scenario config JSON file")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--workers", type=int, default=1, help="parallel replication workers")
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="constrained Grenander fit of a newline-delimited data file")
    fit.add_argument("--data", required=True, help="data file, one value per line")
    fit.add_argument("--a", type=float, required=True, help="lower density bound")
    fit.add_argument("--b", type=float, required=True, help="upper density bound")
    fit.set_defaults(func=_cmd_fit)

    cal = sub.add_parser("calibrate", help="stream p-values into e-values and wealth")
    cal.add_argument("--stream", required=True, help="p-value file or - for stdin")
    cal.add_argument("--algo", choices=["og", "ea"], default="og")
    cal.add_argument("--alpha", type=float, default=0.05)
    cal.add_argument("--a", type=float, default=0.01)
    cal.add_argument("--b", type=float, default=100.0)
    cal.add_argument("--horizon", type=int, default=None)
    cal.add_argument(
        "--test-mode",
        action="store_true",
        help="exit with status 1 when the test rejects, 0 otherwise",
    )
    cal.set_defaults(func=_cmd_calibrate)

    exp = sub.add_parser("experts", help="expert class utilities")
    exp_sub = exp.add_subparsers(dest="experts_command", required=True)
    enum = exp_sub.add_parser("enumerate", help="enumerate the gridded expert class")
    enum.add_argument("--n", type=int, required=True)
    enum.add_argument("--k", type=int, required=True)
    enum.add_argument("--beta", type=float, required=True)
    enum.add_argument("--a", type=float, required=True)
    enum.add_argument("--b", type=float, required=True)
    enum.set_defaults(func=_cmd_experts_enumerate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
