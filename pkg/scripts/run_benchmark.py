"""Run the synthetic benchmark and print the directional checks.

Trains full URL, URL without the unimodal term, the AVE baseline and the
MV/SV single-annotation baselines on the same datasets, then prints
per-seed and mean statistics.

    python3 scripts/run_benchmark.py [--config configs/benchmark.json] [--out DIR]
"""

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from noisygrade.pipeline import ExperimentConfig, load_datasets, run_experiment
from noisygrade.report import write_report

HERE = os.path.dirname(os.path.abspath(__file__))
DEFAULT_CONFIG = os.path.join(HERE, os.pardir, "configs", "benchmark.json")


def variants(base: ExperimentConfig) -> dict[str, ExperimentConfig]:
    return {
        "URL": base,
        "URL alpha2=0": dataclasses.replace(base, use_uni=False),
        "AVE": dataclasses.replace(base, method="AVE"),
        "CE-MV": dataclasses.replace(base, method="CE-MV"),
        "CE-SV": dataclasses.replace(base, method="CE-SV"),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=DEFAULT_CONFIG)
    ap.add_argument("--out", default=None, help="write one report per variant here")
    args = ap.parse_args(argv)

    base = ExperimentConfig.load(args.config)
    datasets = load_datasets(base)
    reports = {}
    for name, cfg in variants(base).items():
        start = time.perf_counter()
        reports[name] = run_experiment(cfg, datasets)
        print(f"{name:14s} acc5 {reports[name].mean('5class', 'accuracy'):.4f} "
              f"per-seed {np.round(reports[name].per_run('5class', 'accuracy'), 4).tolist()} "
              f"({time.perf_counter() - start:.0f}s)")
        if args.out:
            write_report(reports[name], args.out, name=name.replace(" ", "_").replace("=", ""))

    def extra(name, key):
        return [r["extras"][key] for r in reports[name].runs]

    summary = {
        "unimodal URL": extra("URL", "test_unimodal_fraction"),
        "unimodal alpha2=0": extra("URL alpha2=0", "test_unimodal_fraction"),
        "selection purity": extra("URL", "selection_purity"),
        "annotation agreement": extra("URL", "annotation_agreement"),
    }
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
