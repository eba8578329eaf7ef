"""Acceptance criteria, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict with the measured numbers;
the lines are printed in the "acceptance criteria" section of the pytest
summary. The benchmark runs (ablation grid plus the AVE baseline) happen
once per session.
"""

import dataclasses
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from noisygrade import gradcheck
from noisygrade.losses import MemoryBank, batch_centroids
from noisygrade.metrics import macro_auc, macro_f1
from noisygrade.numcore import seeded_rng
from noisygrade.pipeline import ExperimentConfig, ablation_configs, load_datasets, run_experiment

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BENCHMARK = os.path.join(ROOT, "configs", "benchmark.json")


def verdict(number, ok, text):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} {text}"
    assert ok, ACCEPTANCE_LINES[number]


def fmt(values):
    return "[" + ", ".join(f"{v:.4f}" for v in values) + "]"


@pytest.fixture(scope="session")
def benchmark():
    base = ExperimentConfig.load(BENCHMARK)
    datasets = load_datasets(base)
    reports, start = {}, time.perf_counter()
    for label, cfg in ablation_configs(base):
        reports[label] = run_experiment(cfg, datasets)
    grid_seconds = time.perf_counter() - start
    reports["AVE"] = run_experiment(dataclasses.replace(base, method="AVE"), datasets)
    return {"base": base, "datasets": datasets, "reports": reports, "grid_seconds": grid_seconds}


def extras(report, key):
    return [r["extras"][key] for r in report.runs]


# -- 1. gradient suite ---------------------------------------------------------

def test_criterion_1_gradient_suite():
    results, elapsed = gradcheck.run_all(seed=0, instances=100)
    per_loss = [r for r in results if r.name != "network"]
    ok = all(r.passed for r in results) and all(r.instances >= 100 for r in per_loss) and elapsed < 10
    worst = max(r.max_rel_error for r in results)
    verdict(1, ok, f"{len(results)} checks, worst rel error {worst:.2e} (< 1e-4), {elapsed:.2f}s (< 10s)")


# -- 2. closed-form EMA ----------------------------------------------------------

def test_criterion_2_memory_closed_form():
    q = np.array([0.1, 0.2, 0.3, 0.25, 0.15])
    worst = 0.0
    for t in (1, 10, 50):
        bank = MemoryBank(5, beta=0.9)
        for _ in range(t):
            bank.update(0, q)
        worst = max(worst, float(np.max(np.abs(bank.get([0])[0] - (1 - 0.9**t) * q))))
    verdict(2, worst <= 1e-12, f"max |memory - (1 - 0.9^t) q| over t in {{1, 10, 50}} = {worst:.1e} (<= 1e-12)")


# -- 3. unimodality effect ---------------------------------------------------------

def test_criterion_3_unimodality(benchmark):
    full = extras(benchmark["reports"]["MV full"], "test_unimodal_fraction")
    no_uni = extras(benchmark["reports"]["MV -uni"], "test_unimodal_fraction")
    high = np.mean(full) >= 0.95
    lower = all(b < a for a, b in zip(full, no_uni))
    verdict(3, high and lower,
            f"URL unimodal fraction {fmt(full)} mean {np.mean(full):.4f} (>= 0.95: {high}); "
            f"alpha2=0 {fmt(no_uni)} strictly lower on every seed: {lower}")


# -- 4. URL beats AVE --------------------------------------------------------------

def test_criterion_4_url_beats_ave(benchmark):
    url = benchmark["reports"]["MV full"].mean("5class", "accuracy")
    ave = benchmark["reports"]["AVE"].mean("5class", "accuracy")
    verdict(4, url - ave >= 0.02, f"URL {url:.4f} vs AVE {ave:.4f}, margin {100 * (url - ave):.2f} points (>= 2)")


# -- 5. ablation ordering ----------------------------------------------------------

def test_criterion_5_ablation_ordering(benchmark):
    r = benchmark["reports"]
    url, mv, sv = (r[k].mean("5class", "accuracy") for k in ("MV full", "MV baseline", "SV baseline"))
    verdict(5, url >= mv >= sv, f"URL {url:.4f} >= MV baseline {mv:.4f} >= SV baseline {sv:.4f}")


# -- 6. selection purity -----------------------------------------------------------

def test_criterion_6_selection_purity(benchmark):
    report = benchmark["reports"]["MV full"]
    purity = extras(report, "selection_purity")
    agreement = extras(report, "annotation_agreement")
    margins = [p - a for p, a in zip(purity, agreement)]
    verdict(6, all(m >= 0.10 for m in margins),
            f"purity {fmt(purity)} vs agreement {fmt(agreement)}, margins {fmt(margins)} (each >= 0.10)")


# -- 7. oracle equivalence ---------------------------------------------------------

def _pairs_auc(scores, positive):
    pos, neg = scores[positive], scores[~positive]
    diff = pos[:, None] - neg[None, :]
    return (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size


def _count_f1(pred, target, c):
    from fractions import Fraction

    total = Fraction(0)
    for k in range(1, c + 1):
        tp = int(np.sum((pred == k) & (target == k)))
        fp = int(np.sum((pred == k) & (target != k)))
        fn = int(np.sum((pred != k) & (target == k)))
        if tp:
            total += Fraction(2 * tp, 2 * tp + fp + fn)
    return float(total / c)


def test_criterion_7_oracles():
    rng = seeded_rng(7, 0)
    auc_err, f1_mismatch, centroid_err = 0.0, 0, 0.0
    for _ in range(200):
        n, c = int(rng.integers(10, 60)), int(rng.integers(2, 6))
        p = np.round(rng.dirichlet(np.ones(c), size=n), 2)
        target = rng.integers(1, c + 1, size=n)
        present = [k for k in range(1, c + 1) if 0 < np.sum(target == k) < n]
        if present:
            oracle = np.mean([_pairs_auc(p[:, k - 1], target == k) for k in present])
            auc_err = max(auc_err, abs(macro_auc(p, target, c) - oracle))
        pred = rng.integers(1, c + 1, size=n)
        f1_mismatch += macro_f1(pred, target, c) != _count_f1(pred, target, c)
        z = rng.normal(size=(n, 4))
        cent = batch_centroids(z, p)
        groups = np.argmax(p, axis=1)
        for k in range(c):
            members = [z[i] for i in range(n) if groups[i] == k]
            if members:
                centroid_err = max(centroid_err, float(np.max(np.abs(cent.means[k] - np.mean(members, axis=0)))))
            elif cent.seen[k]:
                centroid_err = np.inf
    ok = auc_err <= 1e-12 and f1_mismatch == 0 and centroid_err <= 1e-12
    verdict(7, ok, f"macro_auc max error {auc_err:.1e}, macro_f1 mismatches {f1_mismatch}, "
                   f"centroid max error {centroid_err:.1e} over 200 instances")


# -- 8. determinism ------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "noisygrade", "train", "--config", BENCHMARK, "--seed", "1", "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outputs.append((out / "report.json").read_bytes())
    verdict(8, outputs[0] == outputs[1], f"two train invocations, report.json byte-identical: {outputs[0] == outputs[1]}")


# -- 9. runtime budget --------------------------------------------------------------

def test_criterion_9_budget(benchmark):
    cfg = dataclasses.replace(benchmark["base"], seeds=[1])
    start = time.perf_counter()
    run_experiment(cfg, benchmark["datasets"])
    single = time.perf_counter() - start
    grid = benchmark["grid_seconds"]
    verdict(9, single < 120 and grid < 1800,
            f"one URL run {single:.1f}s (< 120s), 3-seed ablation grid {grid:.1f}s (< 1800s)")
