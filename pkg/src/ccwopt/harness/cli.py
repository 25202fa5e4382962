"""Command-line entry point.

Exit codes: 0 success, 2 no feasible candidate, 3 bad configuration or
arguments, 4 bad or unusable data.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..dataset import TrueModel, generate_dataset, load_csv, sample_context, save_csv
from ..errors import AllCandidatesInfeasible, ConfigError, DataError, EmptyCluster
from ..newsvendor import PSNPInstance, Strategy, VarConstraint, solve_psnp
from ..weights import WeightKind
from .config import ExperimentConfig, derive_seed
from .experiments import run_comparison, run_sample_efficiency, run_speed_benchmark, write_json
from .plots import emit_plots

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG, EXIT_DATA = 0, 2, 3, 4
TAG_CLI_DATA, TAG_CLI_X = 41, 42


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON file whose keys are ExperimentConfig fields")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads for replications")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="ccwopt", description="Contextual cluster-weight chance-constrained newsvendor toolkit")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic historical dataset")
    g.add_argument("--n", type=int, help="number of samples (default: comparison_n)")

    s = sub.add_parser("solve", parents=[common], help="solve one pricing instance")
    s.add_argument("--data", help="dataset CSV (default: generate one)")
    s.add_argument("--weight", choices=[k.value for k in WeightKind], default="knn")
    s.add_argument("--v", type=float, help="profit target")
    s.add_argument("--alpha", type=float, help="allowed shortfall probability")
    s.add_argument("--strategy", choices=[k.value for k in Strategy], default=Strategy.BD_ANALYTIC.value)

    se = sub.add_parser("sample-efficiency", parents=[common], help="gap-vs-N study")
    se.add_argument("--free-exponent", action="store_true", help="also fit the rate exponent")
    se.add_argument("--plot", action="store_true", help="write an SVG beside the CSV")

    sub.add_parser("compare", parents=[common], help="CCW versus residual baselines")

    b = sub.add_parser("bench-speed", parents=[common], help="four-strategy timing")
    b.add_argument("--plot", action="store_true", help="write an SVG beside the CSV")

    pl = sub.add_parser("plot", parents=[common], help="render a study CSV as SVG")
    pl.add_argument("--csv", required=True)
    pl.add_argument("--kind", choices=["sample-efficiency", "speed"], required=True)
    return ap


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out is not None:
        over["out_dir"] = args.out
    if args.threads is not None:
        over["threads"] = args.threads
    if getattr(args, "free_exponent", False):
        over["free_exponent"] = True
    return ExperimentConfig.from_dict({**cfg.to_dict(), **over}) if over else cfg


def _outdir(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen_data(args, cfg):
    n = args.n if args.n is not None else cfg.comparison_n
    model = TrueModel(cfg.relationship_mode, cfg.uncertainty_mode)
    ds = generate_dataset(model, n, PSNPInstance().prices, derive_seed(cfg.seed, TAG_CLI_DATA))
    path = _outdir(cfg) / "dataset.csv"
    save_csv(ds, path)
    print(f"wrote {path} ({ds.n} rows)")


def _cmd_solve(args, cfg):
    instance = PSNPInstance()
    model = TrueModel(cfg.relationship_mode, cfg.uncertainty_mode)
    if args.data:
        ds = load_csv(args.data)
    else:
        ds = generate_dataset(model, cfg.comparison_n, instance.prices, derive_seed(cfg.seed, TAG_CLI_DATA))
    specs = {s.kind.value: s for s in cfg.comparison_specs()}
    if args.weight not in specs:
        raise ConfigError(f"no {args.weight} entry in comparison_weights")
    v = args.v if args.v is not None else float(cfg.targets[0][0])
    alpha = args.alpha if args.alpha is not None else float(cfg.targets[0][1])
    try:
        con = VarConstraint(v, alpha)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    x = sample_context(model, derive_seed(cfg.seed, TAG_CLI_X))
    sol = solve_psnp(instance, ds, specs[args.weight], x, [con], args.strategy)
    out = _outdir(cfg)
    sol.report.to_csv(out / "solve_report.csv")
    result = {"price": sol.price, "q": sol.q, "value": sol.value, "strategy": sol.strategy,
              "iterations": sol.report.iterations, "x": [float(t) for t in x]}
    write_json(result, out / "solution.json")
    print(json.dumps(result, sort_keys=True))


def _cmd_sample_efficiency(args, cfg):
    table = run_sample_efficiency(cfg)
    out = _outdir(cfg)
    table.to_csv(out / "sample_efficiency.csv")
    write_json(table.metadata(), out / "sample_efficiency_meta.json")
    if args.plot:
        emit_plots(out / "sample_efficiency.csv", "sample-efficiency")
    for w, fit in table.fits.items():
        print(f"{w}: C={fit['C']:.4g} R^2={fit['r_squared']:.3f}")


def _cmd_compare(args, cfg):
    table = run_comparison(cfg)
    out = _outdir(cfg)
    table.to_csv(out / "comparison.csv")
    table.runs_to_csv(out / "comparison_runs.csv")
    print(f"wrote {out / 'comparison.csv'}")


def _cmd_bench_speed(args, cfg):
    table = run_speed_benchmark(cfg)
    out = _outdir(cfg)
    table.to_csv(out / "speed.csv")
    if args.plot:
        emit_plots(out / "speed.csv", "speed")
    for n, st, sec in table.rows:
        print(f"N={n:>7} {st:<13} {sec:.4f}s")


def _cmd_plot(args, cfg):
    emit_plots(args.csv, args.kind)
    print(f"wrote {Path(args.csv).with_suffix('.svg')}")


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "solve": _cmd_solve,
    "sample-efficiency": _cmd_sample_efficiency,
    "compare": _cmd_compare,
    "bench-speed": _cmd_bench_speed,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllCandidatesInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DataError, EmptyCluster, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
