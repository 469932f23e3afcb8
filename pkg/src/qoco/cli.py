"""Command-line entry points: run, compare, gen-trace, export-qtable."""

from __future__ import annotations

import argparse
import sys

from .harness import ConfigError, ExperimentConfig, compare, run
from .metrics import load_reports
from .workload import build_standard_spec, generate_trace, save_trace


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg["experiment"]["seeds"] = tuple(args.seed)
    if getattr(args, "method", None) is not None:
        cfg["experiment"]["methods"] = tuple(args.method)
    cfg.validate()
    return cfg


def _cmd_run(args) -> int:
    cfg = _apply_overrides(ExperimentConfig.from_file(args.config), args)
    results = run(cfg, out_dir=args.out)
    exp = cfg["experiment"]
    for seed in exp["seeds"]:
        reports = {m: results[(m, seed)].report for m in exp["methods"]}
        if len(reports) >= 2:
            print(f"== seed {seed} ==")
            print(compare(reports))
        else:
            ((name, rep),) = reports.items()
            print(
                f"seed {seed} {name}: throughput {rep.mean_throughput / 1e6:.3f} MB/s, "
                f"jitter {rep.jitter:.4f}, p99.9 {rep.p999_latency:.4f}s"
            )
    if args.out:
        print(f"outputs written to {args.out}")
    return 0


def _cmd_compare(args) -> int:
    reports = {}
    for path in args.reports:
        for name, rep in load_reports(path).items():
            reports[name] = rep
    print(compare(reports))
    return 0


def _cmd_gen_trace(args) -> int:
    spec = build_standard_spec(args.workload, args.duration, args.rate, args.arrival)
    trace = generate_trace(spec, args.seed)
    save_trace(trace, args.out)
    print(f"{len(trace)} requests -> {args.out}")
    return 0


def _cmd_export_qtable(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    cfg["experiment"]["methods"] = ("lqoco",)
    seed = args.seed[0] if args.seed else cfg["experiment"]["seeds"][0]
    cfg["experiment"]["seeds"] = (seed,)
    cfg.validate()
    from .rl import save_qtable

    results = run(cfg, out_dir=None)
    save_qtable(results[("lqoco", seed)].qtable, args.out, bands=cfg.build_bands())
    print(f"trained Q-table (seed {seed}) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qoco",
        description="Write-back cache bandwidth-control experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, nargs="+", help="override [experiment] seeds")
    p_run.add_argument("--method", nargs="+", help="override [experiment] methods")
    p_run.add_argument("--out", help="output directory for reports and logs")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate report files against the no-control row")
    p_cmp.add_argument("reports", nargs="+")
    p_cmp.set_defaults(func=_cmd_compare)

    p_gen = sub.add_parser("gen-trace", help="write a synthetic trace file")
    p_gen.add_argument("--workload", required=True, help="standard id, e.g. S-3")
    p_gen.add_argument("--duration", type=float, default=1500.0)
    p_gen.add_argument("--rate", type=float, default=1000.0, help="requests/second")
    p_gen.add_argument("--arrival", choices=("poisson", "constant"), default="poisson")
    p_gen.add_argument("--seed", type=int, default=1)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=_cmd_gen_trace)

    p_exp = sub.add_parser("export-qtable", help="train on a config and save the Q-table")
    p_exp.add_argument("--config", required=True)
    p_exp.add_argument("--seed", type=int, nargs="+")
    p_exp.add_argument("--out", required=True)
    p_exp.set_defaults(func=_cmd_export_qtable)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
