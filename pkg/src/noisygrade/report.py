"""MetricsReport persistence: a JSON document plus a flat per-run CSV."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1
METRICS = ("accuracy", "auc", "f1")
# conventions that are choices rather than givens; echoed into every report
CONVENTIONS = {
    "f1": "macro (unweighted mean over classes)",
    "auc": "macro one-vs-rest, classes absent from targets skipped",
    "3class_mapping": "grades {1,2}->benign, {3}->unsure, {4,5}->malignant; probabilities summed",
    "std": "sample standard deviation (ddof=1); 0 for a single run",
    "targets": "agreed annotation of consistently-annotated test samples",
}


@dataclass
class MetricsReport:
    method: str
    config: dict
    summary: dict  # task -> metric -> {"mean", "std"}
    runs: list  # [{"seed", "tasks", "extras"}]
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_runs(cls, method: str, config: dict, runs: list) -> "MetricsReport":
        summary = {}
        for task in runs[0]["tasks"]:
            summary[task] = {}
            for metric in METRICS:
                values = np.array([r["tasks"][task][metric] for r in runs], dtype=np.float64)
                std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
                summary[task][metric] = {"mean": float(np.mean(values)), "std": std}
        return cls(method, config, summary, runs)

    def mean(self, task: str, metric: str) -> float:
        return self.summary[task][metric]["mean"]

    def per_run(self, task: str, metric: str) -> list[float]:
        return [r["tasks"][task][metric] for r in self.runs]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {doc.get('schema_version')!r}")
        return cls(**doc)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def report_json(report: MetricsReport) -> str:
    # repr-based float output round-trips exactly
    return json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n"


def write_report(report: MetricsReport, out_dir, name: str = "report") -> tuple[str, str]:
    """Write ``<name>.json`` and ``<name>_runs.csv`` under ``out_dir``."""
    try:
        os.makedirs(out_dir, exist_ok=True)
        json_path = os.path.join(out_dir, f"{name}.json")
        with open(json_path, "w") as fh:
            fh.write(report_json(report))
        csv_path = os.path.join(out_dir, f"{name}_runs.csv")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "seed", "task"] + list(METRICS))
            for run in report.runs:
                for task, values in run["tasks"].items():
                    w.writerow([report.method, run["seed"], task]
                               + [format(values[m], ".17g") for m in METRICS])
    except OSError as exc:
        raise OSError(f"could not write report to {out_dir}: {exc}") from exc
    return json_path, csv_path


def read_report(path) -> MetricsReport:
    """Load a report from its JSON file (or a directory holding ``report.json``)."""
    if os.path.isdir(path):
        path = os.path.join(path, "report.json")
    try:
        with open(path) as fh:
            return MetricsReport.from_dict(json.load(fh))
    except OSError as exc:
        raise OSError(f"could not read report {path}: {exc}") from exc


def write_train_report(report, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(report), fh, indent=2, default=_json_default)
