"""How often are test predictions unimodal, with and without the unimodal term?

Compares full URL against alpha2 = 0 across learning rates and generator
seeds. On the linear-Gaussian benchmark the class posterior is itself
unimodal, so converged models predict unimodal distributions whether or not
the term is active; differences only show up while training is incomplete.

    python3 scripts/unimodality_probe.py [--lrs 1e-4 2e-4 1e-3] [--gen-seeds 0 1]
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from noisygrade.pipeline import ExperimentConfig, load_datasets, run_experiment

HERE = os.path.dirname(os.path.abspath(__file__))


def fractions(cfg, datasets):
    report = run_experiment(cfg, datasets)
    uni = [r["extras"]["test_unimodal_fraction"] for r in report.runs]
    return uni, report.mean("5class", "accuracy")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(HERE, os.pardir, "configs", "benchmark.json"))
    ap.add_argument("--lrs", type=float, nargs="+", default=[1e-4, 2e-4, 1e-3])
    ap.add_argument("--gen-seeds", type=int, nargs="+", default=[0, 1])
    args = ap.parse_args(argv)

    base = ExperimentConfig.load(args.config)
    print("gen_seed lr      variant   unimodal per seed          acc5")
    for gen_seed in args.gen_seeds:
        cfg = dataclasses.replace(base, generator=dataclasses.replace(base.generator, seed=gen_seed))
        datasets = load_datasets(cfg)
        for lr in args.lrs:
            run = dataclasses.replace(cfg, hyper=dataclasses.replace(cfg.hyper, lr=lr))
            for name, variant in (("full", run), ("alpha2=0", dataclasses.replace(run, use_uni=False))):
                uni, acc = fractions(variant, datasets)
                print(f"{gen_seed:8d} {lr:<7g} {name:9s} {np.round(uni, 4).tolist()!s:26s} {acc:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
