"""Run the SV/MV x {full, -uni, -uni-reg, baseline} grid on the benchmark.

    python3 scripts/ablation_grid.py [--config configs/benchmark.json] [--out runs/ablation]
"""

import argparse
import os
import sys

from noisygrade.cli import cli_main

HERE = os.path.dirname(os.path.abspath(__file__))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=os.path.join(HERE, os.pardir, "configs", "benchmark.json"))
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args(argv)
    return cli_main(["ablate", "--config", args.config, "--out", args.out])


if __name__ == "__main__":
    sys.exit(main())
