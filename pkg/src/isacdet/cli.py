"""Command line front end: ``isacdet <verb> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .beamforming import DesignProblem, InfeasibleDesign, optimize_proposed
from .detector import DegenerateDetector, UnsupportedOperatingPoint, detection_probability, roc_curve
from .experiments import ExperimentSpec, ResultTable, run
from .model import ChannelModelParams, OperatingPoint, SystemConfig, comm_metrics, load_scenario, make_channels


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--scenario", help="JSON scenario file (defaults to the built-in scenario)")
    p.add_argument("--seed", type=int, default=0, help="global RNG seed (default 0)")
    p.add_argument("--out", default="results", help="output directory (default ./results)")
    p.add_argument("--trials", type=int, default=100_000, help="Monte Carlo trials per batch")
    p.add_argument("--realizations", type=int, default=10, help="channel realizations to average over")
    p.add_argument("--pfa", type=float, help="false-alarm probability (experiment-specific default)")
    p.add_argument("--workers", type=int, default=1, help="parallel workers for independent jobs")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isacdet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"isacdet {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)
    common = _common()

    for verb, text in (
        ("pd-map", "exact P_D over a (gamma_c, gamma_s) dB grid with Monte Carlo spot checks"),
        ("approx-qq", "exact vs large-L approximate P_D pairs"),
        ("tradeoff", "power split and P_D versus rate threshold for all schemes"),
        ("mc-validate", "closed-form P_FA/P_D against Monte Carlo, gated at |z| <= 4"),
    ):
        p = sub.add_parser(verb, parents=[common], help=text, description=text)
        p.add_argument("--db-range", type=_floats, help="min,max,step in dB for the SNR grid")
        p.add_argument("--L", dest="L_values", type=_ints, help="comma-separated frame lengths")
        p.add_argument("--rates", type=_floats, help="comma-separated rate thresholds in bits/slot")

    p = sub.add_parser("solve", parents=[common], help="one proposed-scheme design with diagnostics")
    p.add_argument("--realization", type=int, default=0)
    p.add_argument("--rate", type=float, help="rate threshold in bits/slot (overrides the scenario SINR target)")

    p = sub.add_parser("roc", parents=[common], help="ROC of the NP detector and matched filter at one operating point")
    p.add_argument("--gamma-c-db", type=float, required=True)
    p.add_argument("--gamma-s-db", type=float, required=True)
    p.add_argument("--L", type=int, default=1024)
    p.add_argument("--points", type=int, default=41, help="log-spaced P_FA points in [1e-6, 0.5]")
    return parser


def _spec(args) -> ExperimentSpec:
    kw = dict(
        kind=args.verb,
        scenario=args.scenario,
        seed=args.seed,
        out=args.out,
        n_realizations=args.realizations,
        n_trials=args.trials,
        p_fa=args.pfa,
        workers=args.workers,
    )
    if args.db_range:
        if len(args.db_range) != 3:
            raise ValueError("--db-range takes min,max,step")
        kw.update(db_min=args.db_range[0], db_max=args.db_range[1], db_step=args.db_range[2])
    if args.L_values:
        kw["L_values"] = args.L_values
    if args.rates:
        kw["rate_thresholds"] = args.rates
    return ExperimentSpec(**kw)


def _solve(args) -> int:
    cfg, params = load_scenario(args.scenario) if args.scenario else (SystemConfig(), ChannelModelParams())
    if args.rate is not None:
        cfg = cfg.with_rate_threshold(args.rate)
    channels = make_channels(params, cfg, args.seed, args.realization)
    p_fa = args.pfa if args.pfa is not None else 1e-4
    problem = DesignProblem(cfg, channels, p_fa)
    try:
        design, op, diag = optimize_proposed(problem)
    except InfeasibleDesign as exc:
        print(json.dumps({"status": "infeasible", "message": str(exc), "max_sinr": exc.max_sinr}))
        return 2
    sinr, rate = comm_metrics(design, channels.h, cfg.sigma_c2)
    report = {
        "status": "optimal",
        "seed": args.seed,
        "realization": args.realization,
        "gamma_0": cfg.gamma_0,
        "comm_power": design.comm_power,
        "sensing_power": design.sensing_power,
        "sinr": sinr,
        "rate": rate,
        "gamma_c": op.gamma_c,
        "gamma_s": op.gamma_s,
        "p_fa": p_fa,
        "p_d": detection_probability(p_fa, op),
        "diagnostics": json.loads(diag.to_json()),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = json.dumps(report, sort_keys=True, indent=2)
    (out / "solve.json").write_text(text + "\n")
    print(text)
    ok = diag.monotone() and diag.max_rank_ratio < 1e-6
    return 0 if ok else 1


def _roc(args) -> int:
    op = OperatingPoint.from_db(args.gamma_c_db, args.gamma_s_db, args.L)
    grid = np.logspace(-6, np.log10(0.5), args.points)
    rows = []
    try:
        np_curve = roc_curve(op, grid, "np")
    except UnsupportedOperatingPoint:
        np_curve = None
    for i, p in enumerate(grid):
        try:
            mf = roc_curve(op, [p], "mf")[0, 1]
        except DegenerateDetector:
            mf = float(p)
        rows.append({"p_fa": float(p), "p_d_np": float(np_curve[i, 1]) if np_curve is not None else float("nan"),
                     "p_d_mf": float(mf)})
    prov = {"kind": "roc", "gamma_c_db": args.gamma_c_db, "gamma_s_db": args.gamma_s_db, "L": args.L,
            "version": f"isacdet {__version__}", "seed": args.seed}
    table = ResultTable("roc", ("p_fa", "p_d_np", "p_d_mf"), rows, prov)
    path = table.write(args.out)
    print(path)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.verb == "solve":
            return _solve(args)
        if args.verb == "roc":
            return _roc(args)
        table = run(_spec(args))
    except (ValueError, OSError) as exc:
        parser.exit(2, f"isacdet: error: {exc}\n")
    path = table.write(args.out)
    print(path)
    for key in sorted(table.provenance):
        if key.startswith(("max_", "crossing_", "infeasible_")):
            print(f"  {key} = {table.provenance[key]}")
    if not table.passed:
        print("validation gate failed", file=sys.stderr)
        return 1
    return 0
