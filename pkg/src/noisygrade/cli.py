"""Command-line entry point: ``noisygrade <subcommand> [options]``.

Subcommands
    generate   write a synthetic train/test pair as CSV
    train      run an experiment config and write its MetricsReport
    evaluate   score a checkpoint on a CSV dataset
    ablate     run the SV/MV x {full, -uni, -uni-reg, baseline} grid
    gradcheck  finite-difference check of every loss gradient
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

from .data import GeneratorConfig, generate_synthetic, generate_test_set, load_csv, write_csv
from .metrics import evaluate_predictions
from .model import load_checkpoint
from .pipeline import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    ablation_configs,
    load_datasets,
    predict,
    run_experiment,
    test_targets,
    unimodal_fraction,
)
from .report import MetricsReport, write_report


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _add_experiment_flags(p: argparse.ArgumentParser, config_required: bool):
    p.add_argument("--config", required=config_required, help="experiment config JSON")
    p.add_argument("--seed", type=_u64, help="run this single training seed instead of the config's list")
    p.add_argument("--out", help="output directory")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--views", choices=("1", "3"), help="1 = first view only, 3 = all views")
    p.add_argument("--no-con", action="store_true", help="skip selection and contrastive warm-up")
    p.add_argument("--no-reg", action="store_true", help="drop the memory regulariser")
    p.add_argument("--no-uni", action="store_true", help="drop the unimodal regulariser")
    p.add_argument("--reg-sign", choices=("prose", "literal"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisygrade", description="Noise-robust ordinal grading experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset pair")
    g.add_argument("--config", help="GeneratorConfig JSON, or an experiment config with a 'generator' entry")
    g.add_argument("--seed", type=_u64, help="generator seed")
    g.add_argument("--out", required=True, help="directory for train.csv and test.csv")
    g.add_argument("--n-test", type=int, default=400)

    t = sub.add_parser("train", help="run an experiment config")
    _add_experiment_flags(t, config_required=True)

    e = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="dataset CSV; targets are each row's first annotation")
    e.add_argument("--out", help="write report.json and report_runs.csv here")

    a = sub.add_parser("ablate", help="run the ablation grid")
    _add_experiment_flags(a, config_required=False)

    sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    return parser


def _load_config(path: str | None) -> ExperimentConfig:
    return ExperimentConfig() if path is None else ExperimentConfig.load(path)


def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    hyper = cfg.hyper
    if args.views is not None:
        hyper = dataclasses.replace(hyper, views="SV" if args.views == "1" else "MV")
    if args.reg_sign is not None:
        hyper = dataclasses.replace(hyper, reg_sign=args.reg_sign)
    cfg = dataclasses.replace(
        cfg,
        hyper=hyper,
        method=args.method or cfg.method,
        use_con=cfg.use_con and not args.no_con,
        use_reg=cfg.use_reg and not args.no_reg,
        use_uni=cfg.use_uni and not args.no_uni,
        seeds=[args.seed] if args.seed is not None else list(cfg.seeds),
        out_dir=args.out or cfg.out_dir,
    )
    cfg.validate()
    return cfg


def _print_summary(label: str, report: MetricsReport):
    parts = []
    for task in ("5class", "3class"):
        s = report.summary[task]
        parts.append(" ".join(f"{task}.{m}={s[m]['mean']:.4f}±{s[m]['std']:.4f}" for m in ("accuracy", "f1", "auc")))
    print(f"{label}: " + " | ".join(parts))


def cmd_generate(args) -> int:
    gen = GeneratorConfig()
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        doc = doc.get("generator", doc)
        for key in ("prior", "annotators", "sigma"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        try:
            gen = GeneratorConfig(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad generator config in {args.config}: {exc}") from None
    if args.seed is not None:
        gen = dataclasses.replace(gen, seed=args.seed)
    train, test = generate_synthetic(gen), generate_test_set(gen, args.n_test)
    os.makedirs(args.out, exist_ok=True)
    for name, ds in (("train", train), ("test", test)):
        path = os.path.join(args.out, f"{name}.csv")
        write_csv(ds, path)
        print(f"wrote {path} ({len(ds)} samples)")
    return 0


def cmd_train(args) -> int:
    cfg = _apply_flags(_load_config(args.config), args)
    report = run_experiment(cfg)
    _print_summary(cfg.method, report)
    if cfg.out_dir:
        print(f"report: {os.path.join(cfg.out_dir, 'report.json')}")
    return 0


def cmd_evaluate(args) -> int:
    try:
        params, _, meta = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {args.checkpoint}") from None
    ds = load_csv(args.data, n_classes=params.dims[3])
    n_views = int(meta.get("n_views", ds.n_views))
    x = ds.features(n_views)
    if x.shape[1] != params.dims[0]:
        raise ConfigError(f"checkpoint expects {params.dims[0]} input features, {args.data} gives {x.shape[1]}")
    p = predict(params, x)
    tasks = evaluate_predictions(p, test_targets(ds), ds.n_classes)
    run = {"seed": meta.get("seed"), "tasks": tasks, "extras": {"test_unimodal_fraction": unimodal_fraction(p)}}
    config = {"checkpoint": os.path.basename(args.checkpoint), "data": os.path.basename(args.data),
              "n_views": n_views}
    report = MetricsReport.from_runs(meta.get("method", "checkpoint"), config, [run])
    _print_summary(report.method, report)
    if args.out:
        write_report(report, args.out)
    return 0


def cmd_ablate(args) -> int:
    base = _apply_flags(_load_config(args.config), args)
    datasets = load_datasets(base)
    rows = []
    for label, cfg in ablation_configs(base):
        out = os.path.join(base.out_dir, label.replace(" ", "_")) if base.out_dir else None
        report = run_experiment(dataclasses.replace(cfg, out_dir=out), datasets)
        _print_summary(label, report)
        rows.append((label, report))
    if base.out_dir:
        path = os.path.join(base.out_dir, "ablation.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "task", "metric", "mean", "std"])
            for label, report in rows:
                for task, metrics in report.summary.items():
                    for metric, s in metrics.items():
                        w.writerow([label, task, metric, format(s["mean"], ".17g"), format(s["std"], ".17g")])
        print(f"ablation table: {path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import REL_TOL, run_all

    results, elapsed = run_all()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:14s} instances={r.instances:4d} "
              f"max_rel_error={r.max_rel_error:.3e}")
    ok = all(r.passed for r in results)
    print(f"{'all gradients within' if ok else 'gradient check FAILED at'} rel tol {REL_TOL:g} ({elapsed:.2f}s)")
    return 0 if ok else 1


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, OSError, FloatingPointError) as exc:
        print(f"noisygrade {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())
