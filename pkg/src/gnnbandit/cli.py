"""Command-line entry point: train, attack, regret-bench, plotdata, version."""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .errors import GnnBanditError
from .harness import (
    ExperimentConfig,
    build_graph_task,
    build_node_task,
    emit_plotdata,
    graph_accuracy,
    regret_bench,
    run_experiment,
    write_regret_csv,
)
from .models import accuracy, save_params


def _load_config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    for key in ("seed", "out", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_text("", overrides)


def cmd_train(args):
    cfg = _load_config(args)
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.task == "graph":
        graphs, labels, half, params = build_graph_task(cfg)
        acc = graph_accuracy(params, graphs[:half], labels[:half])
    else:
        g, params = build_node_task(cfg)
        acc = accuracy(params, g, self_loops=cfg.self_loops, propagation_steps=cfg.propagation_steps)
    path = os.path.join(cfg.out, "weights.gbnn")
    save_params(params, path)
    print(f"train accuracy {acc:.4f}")
    print(f"weights written to {path}")


def cmd_attack(args):
    cfg = _load_config(args)
    res = run_experiment(cfg)
    print(f"victim train accuracy {res.info['train_accuracy']:.4f}, {len(res.info['targets'])} targets")
    for attack, B, C, T, alpha, delta, count, k, rate, best, q in res.summary:
        print(f"{attack:7s} B={B} C={C:g} T={T} alpha={alpha:g} delta={delta:g}  "
              f"success {rate:.3f} (best-round {best:.3f}, n={count}, mean queries {q:g})")
    print(f"metrics: {res.metrics_path}\nsummary: {res.summary_path}")


def cmd_regret(args):
    cfg = _load_config(args)
    res = regret_bench(cfg.regret_n, cfg.regret_budget, cfg.regret_t, cfg.regret_trials, seed=cfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "regret.csv")
    write_regret_csv(res, path)
    for T, reg in zip(res.horizons, res.regrets):
        print(f"T={T:6d}  mean regret {reg:.4f}")
    flag = " (degenerate fit)" if res.degenerate else ""
    print(f"fitted exponent {res.exponent:.4f}{flag}")
    print(f"written to {path}")


def cmd_plotdata(args):
    paths = emit_plotdata(args.metrics, args.axis, args.out or "plotdata")
    for attack, path in sorted(paths.items()):
        print(f"{attack}: {path}")


def cmd_version(args):
    print(f"gnnbandit {__version__}")


def build_parser():
    parser = argparse.ArgumentParser(prog="gnnbandit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value experiment file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    for name, fn, text in (("train", cmd_train, "train a victim model and write its weight file"),
                           ("attack", cmd_attack, "run the attack sweep and write metrics/summary CSVs"),
                           ("regret-bench", cmd_regret, "empirical regret exponent on a convex testbed")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("plotdata", help="per-attack (x, success rate) files from metrics.csv")
    p.add_argument("metrics", help="metrics.csv path")
    p.add_argument("--axis", required=True, help="B, C, T, alpha or delta")
    p.add_argument("--out", help="output directory (default: plotdata)")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("version", help="print the package version")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except GnnBanditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
