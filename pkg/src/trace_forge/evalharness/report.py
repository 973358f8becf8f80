"""Experiment report model and its JSON / TSV serialization.

The JSON file has a fixed key order::

    {"format": "trace-forge-report 1",
     "config": {...},                  # echo of the grid and training setup
     "split_hash": "...",              # sha256 over (sample id, split) pairs
     "test_ids": [...],
     "baseline": {aggregates...},      # predict-the-training-mean model
     "cells": [{"key", "modality", "size", "fusion", "seed", "status",
                "error", "aggregates", "history", "per_sample"}, ...],
     "ranking": [cell keys, best first],
     "timing": {cell key: seconds}}    # wall clock, excluded from equality

``per_sample`` maps each test sample id to its 600 absolute errors in mm, so
every aggregate can be recomputed from the file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EmptyCollection, IoError, ParseError

REPORT_FORMAT = "trace-forge-report 1"
AGGREGATE_KEYS = (
    "min_mm",
    "max_mm",
    "mean_mm",
    "median_mm",
    "frac_under_1mm",
    "n_points",
    "n_under_1mm",
    "sample_mean_mean_mm",
    "sample_mean_median_mm",
)


def aggregates(per_point) -> dict:
    """Pooled and per-sample statistics of an (n_samples, n_points) error array.

    Both readings of a single summary number are kept: pooled over every
    point (``mean_mm``/``median_mm``) and over per-sample means.
    """
    err = np.atleast_2d(np.asarray(per_point, dtype=np.float64))
    if err.size == 0:
        raise EmptyCollection("no errors to aggregate")
    flat = err.reshape(-1)
    means = err.mean(axis=1)
    under = int(np.count_nonzero(flat < 1.0))
    return {
        "min_mm": float(flat.min()),
        "max_mm": float(flat.max()),
        "mean_mm": float(flat.mean()),
        "median_mm": float(np.median(flat)),
        "frac_under_1mm": under / flat.size,
        "n_points": int(flat.size),
        "n_under_1mm": under,
        "sample_mean_mean_mm": float(means.mean()),
        "sample_mean_median_mm": float(np.median(means)),
    }


def cell_key(modality: str, size: str, fusion: str, seed: int) -> str:
    return f"{modality}/{size}/{fusion}/seed{seed}"


@dataclass
class CellResult:
    modality: str
    size: str
    fusion: str
    seed: int
    status: str = "ok"
    error: str | None = None
    aggregates: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    per_sample: dict = field(default_factory=dict)

    @property
    def key(self) -> str:
        return cell_key(self.modality, self.size, self.fusion, self.seed)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def sample_means(self) -> dict:
        return {sid: float(np.mean(e)) for sid, e in self.per_sample.items()}

    def to_json(self) -> dict:
        return {
            "key": self.key,
            "modality": self.modality,
            "size": self.size,
            "fusion": self.fusion,
            "seed": self.seed,
            "status": self.status,
            "error": self.error,
            "aggregates": {k: self.aggregates[k] for k in AGGREGATE_KEYS if k in self.aggregates},
            "history": self.history,
            "per_sample": {sid: [float(v) for v in e] for sid, e in self.per_sample.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "CellResult":
        return cls(
            d["modality"],
            d["size"],
            d["fusion"],
            int(d["seed"]),
            d["status"],
            d["error"],
            dict(d["aggregates"]),
            dict(d["history"]),
            {sid: list(e) for sid, e in d["per_sample"].items()},
        )


@dataclass
class ExperimentReport:
    config: dict
    split_hash: str
    test_ids: list
    baseline: dict
    cells: list
    ranking: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def cell(self, key: str) -> CellResult:
        for c in self.cells:
            if c.key == key:
                return c
        raise KeyError(key)

    def payload(self) -> dict:
        """Everything except wall-clock timing."""
        return {
            "format": REPORT_FORMAT,
            "config": self.config,
            "split_hash": self.split_hash,
            "test_ids": list(self.test_ids),
            "baseline": self.baseline,
            "cells": [c.to_json() for c in self.cells],
            "ranking": list(self.ranking),
        }

    def to_json(self) -> dict:
        d = self.payload()
        d["timing"] = self.timing
        return d

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExperimentReport):
            return NotImplemented
        return json.dumps(self.payload()) == json.dumps(other.payload())

    __hash__ = None


def dumps_report(report: ExperimentReport) -> str:
    return json.dumps(report.to_json(), indent=1) + "\n"


def loads_report(text: str, path=None) -> ExperimentReport:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"report is not valid JSON: {exc.msg}", exc.lineno, path) from None
    if d.get("format") != REPORT_FORMAT:
        raise ParseError("not a trace-forge report", None, path)
    try:
        return ExperimentReport(
            d["config"],
            d["split_hash"],
            list(d["test_ids"]),
            d["baseline"],
            [CellResult.from_json(c) for c in d["cells"]],
            list(d["ranking"]),
            dict(d.get("timing", {})),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"report misses field {exc}", None, path) from None


def write_report(report: ExperimentReport, path) -> None:
    try:
        Path(path).write_text(dumps_report(report), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write report {path}: {exc}") from exc


def read_report(path) -> ExperimentReport:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read report {path}: {exc}") from exc
    return loads_report(text, path)


def format_table(report: ExperimentReport) -> str:
    """Tab-separated summary, one row per cell in ranking order, then the baseline."""
    cols = ("rank", "cell", "status", "mean_mm", "median_mm", "max_mm", "min_mm", "frac_under_1mm",
            "sample_mean_mean_mm", "sample_mean_median_mm")
    lines = ["\t".join(cols)]
    order = list(report.ranking) + [c.key for c in report.cells if c.key not in report.ranking]
    for i, key in enumerate(order, start=1):
        c = report.cell(key)
        a = c.aggregates
        vals = [f"{a[k]:.4f}" if k in a else "nan" for k in cols[3:]]
        lines.append("\t".join([str(i) if c.ok else "-", key, c.status] + vals))
    b = report.baseline
    lines.append("\t".join(["-", "baseline/train-mean", "ok"] + [f"{b[k]:.4f}" for k in cols[3:]]))
    return "\n".join(lines) + "\n"
