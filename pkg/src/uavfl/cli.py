"""Command-line entry point: ``uavfl {optimize,simulate,verify,baseline,plot-data}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .flsim import SCHEMES, LearningConfig, initial_statistics, run_experiment
from .geometry import hovering, read_trajectory_csv, write_trajectory_csv
from .optimizer import circle_through_start, optimize_alternating, static_ps, tune_circular, write_trace_csv
from .scenario import ScenarioError, load_scenario, resolve_config_path
from .verify import run_checks

log = logging.getLogger("uavfl")


def _writer(path: Path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def write_devices(scenario, path: Path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["m", "x", "y", "weight"])
        for m, ((x, y), b) in enumerate(zip(scenario.devices, scenario.weights)):
            w.writerow([m, repr(float(x)), repr(float(y)), repr(float(b))])


def write_manifest(out: Path, args, scenario) -> None:
    manifest = {
        "subcommand": args.command,
        "config": str(args.config),
        "scenario_hash": scenario.digest(),
        "seed": scenario.seed,
        "output_dir": str(out),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
        "argv": args.argv,
        "resolved_config": scenario.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _scenario(args):
    scenario = load_scenario(args.config)
    if args.seed is not None:
        scenario = scenario.replace(seed=args.seed)
    if getattr(args, "max_outer_iters", None) is not None:
        scenario = scenario.replace(max_outer_iters=args.max_outer_iters)
    return scenario


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    probe.write_text("")
    probe.unlink()
    return out


def cmd_optimize(args) -> int:
    scenario = _scenario(args)
    out = _prepare_out(args)
    rho, ups, task = initial_statistics(scenario)
    scenario = scenario.replace(weights=task.weights)
    init = circle_through_start(scenario, rho, ups)
    result = optimize_alternating(scenario, rho, ups, init.trajectory, dim=task.dim)
    write_trajectory_csv(result.trajectory, out / "trajectory.csv")
    write_trace_csv(result, out / "trace.csv")
    fh, w = _writer(out / "zeta.csv")
    with fh:
        w.writerow(["n", "zeta"])
        for n, z in enumerate(result.zeta, start=1):
            w.writerow([n, repr(float(z))])
    write_devices(scenario, out / "devices.csv")
    write_manifest(out, args, scenario)
    print(
        f"optimized {result.iterations} outer iterations (converged={result.converged}); "
        f"relaxed objective {result.objectives[-1]:.6g}, rounded objective {result.rounded_objective:.6g} (per dimension)"
    )
    return 0


def cmd_baseline(args) -> int:
    scenario = _scenario(args)
    out = _prepare_out(args)
    rho, ups, task = initial_statistics(scenario)
    scenario = scenario.replace(weights=task.weights)
    static = static_ps(scenario, rho, ups)
    circle = tune_circular(scenario, rho, ups)
    write_trajectory_csv(hovering(static.position, scenario.n_slots), out / "trajectory_static-ps.csv")
    write_trajectory_csv(circle.trajectory, out / "trajectory_circular.csv")
    write_devices(scenario, out / "devices.csv")
    fh, w = _writer(out / "baselines.csv")
    with fh:
        w.writerow(["scheme", "center_x", "center_y", "radius", "objective"])
        w.writerow(["static-ps", repr(float(static.position[0])), repr(float(static.position[1])), "0.0", repr(static.objective)])
        w.writerow(["circular", repr(float(circle.center[0])), repr(float(circle.center[1])), repr(circle.radius), repr(circle.objective)])
    write_manifest(out, args, scenario)
    print(f"static-ps objective {static.objective:.6g}; circular (r={circle.radius:.1f} m) objective {circle.objective:.6g}")
    return 0


def cmd_simulate(args) -> int:
    scenario = _scenario(args)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    if args.rounds is not None and args.rounds < 1:
        raise ValueError("--rounds must be >= 1")
    if args.trials < 1:
        raise ValueError("--trials must be >= 1")
    config = dict(scenario.learning)
    if args.partition:
        config["partition"] = args.partition
    config = LearningConfig.from_dict(config)
    out = _prepare_out(args)
    report = run_experiment(scenario, config, schemes, trials=args.trials, rounds=args.rounds, out_dir=out)
    write_devices(scenario, out / "devices.csv")
    write_manifest(out, args, scenario)
    for scheme, acc in report.final_mean().items():
        print(f"{scheme:>10s}: final accuracy {acc:.4f}")
    return 0


def cmd_verify(args) -> int:
    scenario = _scenario(args)
    results = run_checks(scenario, trials=args.trials, seed=scenario.seed, instances=args.instances)
    for r in results:
        print(r.line())
    if args.out:
        out = _prepare_out(args)
        fh, w = _writer(out / "verify.csv")
        with fh:
            w.writerow(["check", "passed", "worst", "tolerance"])
            for r in results:
                w.writerow([r.name, int(r.passed), repr(r.worst), repr(r.tolerance)])
        write_manifest(out, args, scenario)
    return 0 if all(r.passed for r in results) else 1


def cmd_plot_data(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise FileNotFoundError(f"run directory not found: {run}")
    out = _prepare_out(args)
    fh, w = _writer(out / "trajectory_map.csv")
    with fh:
        w.writerow(["source", "n", "x", "y"])
        for path in sorted(run.glob("trajectory*.csv")):
            traj = read_trajectory_csv(path)
            for n, (x, y) in enumerate(traj.points):
                w.writerow([path.stem, n, repr(float(x)), repr(float(y))])
    if (run / "devices.csv").exists():
        (out / "devices.csv").write_text((run / "devices.csv").read_text(encoding="utf-8"), encoding="utf-8")
    logs = sorted(run.glob("rounds_trial*.csv"))
    if logs:
        acc: dict[tuple[str, int], list[float]] = {}
        order: list[str] = []
        for path in logs:
            with open(path, newline="", encoding="utf-8") as src:
                for row in csv.DictReader(src):
                    if row["scheme"] not in order:
                        order.append(row["scheme"])
                    acc.setdefault((row["scheme"], int(row["round"])), []).append(float(row["accuracy"]))
        fh, w = _writer(out / "accuracy_curves.csv")
        with fh:
            w.writerow(["scheme", "round", "accuracy_mean", "accuracy_std", "trials"])
            for scheme in order:
                for t in sorted(k[1] for k in acc if k[0] == scheme):
                    vals = np.array(acc[(scheme, t)])
                    w.writerow([scheme, t, repr(float(vals.mean())), repr(float(vals.std())), vals.size])
    print(f"plot data written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uavfl", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default="paper_default", help="config file or bundled preset name")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("optimize", help="run the alternating optimizer and write trajectory, weights and trace")
    common(p)
    p.add_argument("--max-outer-iters", type=int, default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="run the federated-learning experiment")
    common(p)
    p.add_argument("--schemes", default=",".join(SCHEMES), help=f"comma-separated subset of {', '.join(SCHEMES)}")
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--partition", choices=["iid", "label-skew"], default=None)
    p.add_argument("--max-outer-iters", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the numerical oracle checks")
    common(p, out_required=False)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--instances", type=int, default=10)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("baseline", help="static PS at the barycenter and the tuned circular trajectory")
    common(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("plot-data", help="reshape a previous run's outputs for plotting")
    p.add_argument("--run", required=True, help="directory written by optimize/baseline/simulate")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_plot_data)
    return parser


def run_cli(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.config is not None and args.command != "plot-data":
        try:
            args.config = str(resolve_config_path(args.config))
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except (ScenarioError, ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
