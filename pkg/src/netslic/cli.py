"""Command-line interface.

Subcommands::

    generate   simulate one dataset and write it as CSV + JSON
    calibrate  estimate line parameters and correction factors of a dataset
    evaluate   Monte-Carlo accuracy report for a scenario
    sweep      Monte-Carlo reports over regularization weights
    lse        base-case versus calibrated state estimation

Every output directory gets a manifest with the root seed and a hash of
the full configuration, so any run can be repeated exactly.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional

from .evaluation import (PRESETS, Scenario, run_monte_carlo, sweep_lambda,
                         sweep_rows)
from .exceptions import PipelineError, SlicError
from .io import (calibration_report, config_hash, environment, read_dataset,
                 write_dataset, write_json)
from .lse import lse_comparison
from .model import NetworkSpec
from .networks import desk_network
from .pipeline import calibrate_dataset
from .solver import SolverConfig
from .synthgen import NoiseConfig

log = logging.getLogger("netslic")

SCENARIOS = tuple(PRESETS) + ("custom",)
DEFAULT_SWEEP = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0)


def _network(args) -> NetworkSpec:
    return desk_network() if args.config is None else \
        NetworkSpec.load(args.config)


def _scenario(args) -> Scenario:
    base = NoiseConfig() if args.scenario == "custom" else \
        PRESETS[args.scenario]
    overrides = {}
    if args.tve is not None:
        overrides["tve_max"] = args.tve
    if args.rqm_class is not None:
        overrides["it_accuracy_rqm"] = args.rqm_class
        overrides["perfect_rqm"] = False
    if args.regular_class is not None:
        overrides["it_accuracy_regular"] = args.regular_class
    return Scenario(args.scenario, replace(base, rng_seed=args.seed,
                                           **overrides))


def _solver(args) -> SolverConfig:
    cfg = SolverConfig()
    if args.lam is not None:
        cfg = replace(cfg, lam=args.lam)
    if args.lam1 is not None:
        cfg = replace(cfg, lam1=args.lam1)
    return cfg


def _manifest(command, args, network, scenario=None, solver=None, **extra):
    config = {"command": command, "network": network.to_dict(),
              "seed": args.seed,
              "scenario": None if scenario is None else asdict(scenario),
              "solver": None if solver is None else asdict(solver)}
    config.update(extra)
    return {"command": command, "seed": args.seed,
            "config_hash": config_hash(config), "config": config,
            "environment": environment()}


def _write_csv_rows(path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def cmd_generate(args) -> int:
    network = _network(args)
    scenario = _scenario(args)
    dataset = scenario.dataset(network, args.seed)
    out = write_dataset(dataset, args.out,
                        _manifest("generate", args, network, scenario))
    print(f"wrote {dataset.n_samples} samples of "
          f"{len(dataset.measurements)} branches to {out}")
    return 0


def cmd_calibrate(args) -> int:
    dataset = read_dataset(args.dataset)
    solver = _solver(args)
    manifest = _manifest("calibrate", args, dataset.network, solver=solver,
                         dataset=str(args.dataset),
                         dataset_manifest=dataset.manifest.get("config_hash"))
    status = 0
    try:
        estimates, failures = calibrate_dataset(dataset, solver), {}
    except PipelineError as exc:
        estimates, failures, status = exc.partial, exc.failures, 1
    report = calibration_report(estimates, manifest, failures)
    path = Path(args.out)
    if path.suffix != ".json":
        path.mkdir(parents=True, exist_ok=True)
        path = path / "calibration.json"
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    write_json(path, report)
    for e in estimates.values():
        cf = e.cfs
        print(f"{e.branch[0]:>3}-{e.branch[1]:<3} r={e.line.r:.6f} "
              f"x={e.line.x:.6f} b={e.line.b:.6f} "
              f"|a|=({abs(cf.alpha_from):.5f}, {abs(cf.alpha_to):.5f}) "
              f"|b|=({abs(cf.beta_from):.5f}, {abs(cf.beta_to):.5f})")
    for br, exc in failures.items():
        print(f"{br[0]:>3}-{br[1]:<3} FAILED: {exc}", file=sys.stderr)
    print(f"report: {path}")
    return status


def cmd_evaluate(args) -> int:
    network, scenario, solver = _network(args), _scenario(args), _solver(args)
    report = run_monte_carlo(network, scenario, args.trials, solver,
                             args.seed, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv_rows(out / "report.csv", report.rows())
    summary = report.summary()
    summary["manifest"] = _manifest("evaluate", args, network, scenario,
                                    solver, trials=args.trials)
    write_json(out / "summary.json", summary)
    print(report.table())
    print(f"line MARE {report.line_mare():.4f}%  "
          f"CF magnitude MARE VT {report.cf_magnitude_mare('vt'):.5f}% "
          f"CT {report.cf_magnitude_mare('ct'):.5f}%  "
          f"angle MAE VT {report.cf_angle_mae('vt'):.5f} deg "
          f"CT {report.cf_angle_mae('ct'):.5f} deg")
    return 0


def cmd_sweep(args) -> int:
    network, scenario, solver = _network(args), _scenario(args), _solver(args)
    values = args.values or list(DEFAULT_SWEEP)
    sweep = sweep_lambda(values, network, scenario, args.trials, solver,
                         args.seed, args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep_rows(sweep)
    _write_csv_rows(out / "sweep.csv", rows)
    _write_csv_rows(out / "sweep_detail.csv",
                    [r for _, rep in sweep for r in rep.rows()])
    write_json(out / "summary.json", {
        "rows": rows,
        "manifest": _manifest("sweep", args, network, scenario, solver,
                              trials=args.trials, values=list(values))})
    print(f"{'lambda':>10} {'line MARE %':>12} {'CF mag %':>10} "
          f"{'CF ang deg':>11} {'aggregate %':>12}")
    for r in rows:
        print(f"{r['lambda']:>10g} {r['line_mare_pct']:>12.5f} "
              f"{r['cf_magnitude_mare_pct']:>10.5f} "
              f"{r['cf_angle_mae_deg']:>11.5f} "
              f"{r['aggregate_error_pct']:>12.5f}")
    return 0


def cmd_lse(args) -> int:
    network, scenario, solver = _network(args), _scenario(args), _solver(args)
    summary = lse_comparison(network, scenario, args.trials, solver,
                             args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary["manifest"] = _manifest("lse", args, network, scenario, solver,
                                    trials=args.trials)
    write_json(out / "lse.json", summary)
    b, p, imp = summary["base"], summary["post_slic"], \
        summary["improvement_pct"]
    print(f"base      net ARE {b['are']:.5f}%  net AE {b['ae']:.5f} deg")
    print(f"post-SLIC net ARE {p['are']:.5f}%  net AE {p['ae']:.5f} deg")
    print(f"improvement ARE {imp['are']:.1f}%  AE {imp['ae']:.1f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="network spec JSON (default: built-in network)")
    common.add_argument("--seed", type=int, default=0, help="root seed")
    common.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="RQM-branch regularization weight")
    common.add_argument("--lambda1", dest="lam1", type=float, default=None,
                        help="branch-pair prior weight")
    common.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    scen = argparse.ArgumentParser(add_help=False)
    scen.add_argument("--scenario", choices=SCENARIOS, default="realistic")
    scen.add_argument("--tve", type=float, default=None,
                      help="override the PMU TVE budget (fraction)")
    scen.add_argument("--rqm-class", type=float, default=None,
                      help="override the RQM accuracy class (percent)")
    scen.add_argument("--regular-class", type=float, default=None,
                      help="override the regular IT accuracy class")

    mc = argparse.ArgumentParser(add_help=False)
    mc.add_argument("--trials", type=int, default=100)
    mc.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                    help="worker processes (default: all cores)")

    parser = argparse.ArgumentParser(
        prog="netslic",
        description="Line parameter estimation and instrument transformer "
                    "calibration from synchrophasor data.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("generate", parents=[common, scen],
                       help="simulate a dataset")
    p.set_defaults(func=cmd_generate)
    p = sub.add_parser("calibrate", parents=[common],
                       help="calibrate a dataset directory")
    p.add_argument("dataset", type=Path)
    p.set_defaults(func=cmd_calibrate)
    p = sub.add_parser("evaluate", parents=[common, scen, mc],
                       help="Monte-Carlo accuracy report")
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("sweep", parents=[common, scen, mc],
                       help="regularization-weight sweep")
    p.add_argument("--values", type=float, nargs="+", default=None)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("lse", parents=[common, scen],
                       help="state estimation before/after calibration")
    p.add_argument("--trials", type=int, default=30)
    p.set_defaults(func=cmd_lse)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "trials", 1) < 1:
        parser.error("--trials must be >= 1")
    try:
        return args.func(args)
    except SlicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
