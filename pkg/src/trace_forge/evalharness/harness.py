"""Modality x size x fusion experiment grids over a generated dataset."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..errors import IoError, ParseError, TooFewSamples, TraceForgeError
from ..fusionnet.checkpoint import save_checkpoint
from ..fusionnet.inputs import MODALITIES
from ..fusionnet.model import FUSIONS, SIZES, build_model
from ..fusionnet.train import TrainConfig, predict_trace, train
from ..geometry.baseline import geometric_trace
from ..synthgen.dataset import Dataset, split_hash
from .report import CellResult, ExperimentReport, aggregates, cell_key

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentGrid:
    modalities: tuple = ("gray_depth",)
    sizes: tuple = ("S",)
    fusions: tuple = ("late_max",)
    seeds: tuple = (42,)
    data: str = ""
    train: TrainConfig = TrainConfig()
    input_size: int = 64

    def __post_init__(self):
        for name, axis, allowed in (
            ("modalities", self.modalities, MODALITIES),
            ("sizes", self.sizes, tuple(SIZES)),
            ("fusions", self.fusions, FUSIONS),
        ):
            if not axis:
                raise ValueError(f"grid axis {name} is empty")
            bad = [v for v in axis if v not in allowed]
            if bad:
                raise ValueError(f"unknown {name}: {', '.join(bad)}")
        if not self.seeds:
            raise ValueError("grid axis seeds is empty")

    def cells(self):
        for m in self.modalities:
            for s in self.sizes:
                for f in self.fusions:
                    for seed in self.seeds:
                        yield m, s, f, int(seed)

    def echo(self) -> dict:
        return {
            "modalities": list(self.modalities),
            "sizes": list(self.sizes),
            "fusions": list(self.fusions),
            "seeds": list(self.seeds),
            "data": str(self.data),
            "input_size": self.input_size,
            "train": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.train).items()},
        }


_LIST_KEYS = {"modalities", "sizes", "fusions", "seeds"}
_TRAIN_KEYS = {
    "epochs": int,
    "learning_rate": float,
    "batch_size": int,
    "loss": str,
    "augment_copies": int,
    "freeze_encoder": lambda v: v.lower() in ("1", "true", "yes"),
}


def parse_grid(text: str, path=None, overrides: dict | None = None) -> ExperimentGrid:
    """``key = value`` lines; list axes take whitespace-separated values.

    Keys: modalities, sizes, fusions, seeds, data, input_size and the training
    settings epochs, learning_rate, batch_size, loss, augment_copies,
    freeze_encoder. ``overrides`` (same keys, string values) win over the file.
    """
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno, path)
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in _LIST_KEYS | set(_TRAIN_KEYS) | {"data", "input_size", "seed"}:
            raise ParseError(f"unknown grid key {k!r}", lineno, path)
        raw[k] = v
    raw.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    kw: dict = {}
    train_kw: dict = {}
    try:
        for k, v in raw.items():
            if k in _LIST_KEYS:
                vals = v.replace(",", " ").split()
                kw[k] = tuple(int(x) for x in vals) if k == "seeds" else tuple(vals)
            elif k == "seed":
                train_kw["seed"] = int(v)
            elif k in _TRAIN_KEYS:
                train_kw[k] = _TRAIN_KEYS[k](v)
            elif k == "input_size":
                kw[k] = int(v)
            else:
                kw[k] = v
        return ExperimentGrid(train=TrainConfig(**train_kw), **kw)
    except ValueError as exc:
        raise ParseError(f"invalid grid: {exc}", None, path) from None


def read_grid(path, overrides=None) -> ExperimentGrid:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read grid {path}: {exc}") from exc
    return parse_grid(text, path, overrides)


def check_split_hygiene(dataset: Dataset) -> None:
    train_ids = set(dataset.ids("train"))
    for other in ("val", "test"):
        both = train_ids & set(dataset.ids(other))
        if both:
            raise TraceForgeError(f"{len(both)} sample ids are in both train and {other}")


def mean_trace_baseline(train_samples, test_samples) -> np.ndarray:
    """Per-point errors of predicting the per-eye mean training trace."""
    means = {}
    for eye in ("right", "left"):
        rows = [s.truth.radii_mm for s in train_samples if s.eye == eye]
        if not rows:
            rows = [s.truth.radii_mm for s in train_samples]
        means[eye] = np.mean(rows, axis=0)
    return np.stack([np.abs(means[s.eye] - s.truth.radii_mm) for s in test_samples])


def run_grid(grid: ExperimentGrid, dataset: Dataset | None = None, out_dir=None, progress=None) -> ExperimentReport:
    """Train and evaluate every cell; a failing cell is recorded, not fatal.

    The test split is only touched for the final evaluation; normalizers and
    checkpoint selection use train and val.
    """
    dataset = dataset or Dataset(grid.data)
    check_split_hygiene(dataset)
    train_s = dataset.split("train")
    val_s = dataset.split("val")
    test_s = dataset.split("test")
    if not test_s:
        raise TooFewSamples("the dataset has no test samples")
    baseline = aggregates(mean_trace_baseline(train_s, test_s))
    cells, timing = [], {}
    out = Path(out_dir) if out_dir is not None else None
    for modality, size, fusion, seed in grid.cells():
        key = cell_key(modality, size, fusion, seed)
        t0 = time.perf_counter()
        cell = CellResult(modality, size, fusion, seed)
        try:
            cfg = TrainConfig(**{**asdict(grid.train), "seed": seed})
            model = build_model(modality, fusion, size, grid.input_size, seed=seed)
            model, hist = train(model, train_s, val_s, cfg)
            errs = {}
            for s in test_s:
                pred = predict_trace(model, s)
                errs[s.sample_id] = np.abs(pred.radii_mm - s.truth.radii_mm)
            cell.per_sample = {sid: [float(v) for v in e] for sid, e in errs.items()}
            cell.aggregates = aggregates(np.stack(list(errs.values())))
            cell.history = {
                "epochs": cfg.epochs,
                "best_epoch": hist.best_epoch,
                "train_loss": [float(v) for v in hist.train_loss],
                "val_mean_mm": [float(v) for v in hist.val_mean_mm],
            }
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                save_checkpoint(model, out / f"{modality}_{size}_{fusion}_seed{seed}.tfck")
        except (TraceForgeError, ValueError, RuntimeError) as exc:
            cell.status = "failed"
            cell.error = f"{type(exc).__name__}: {exc}"
            log.warning("cell %s failed: %s", key, cell.error)
        timing[key] = time.perf_counter() - t0
        cells.append(cell)
        if progress is not None:
            progress(cell)
    config = grid.echo()
    config["dataset_seed"] = dataset.manifest.header.get("seed")
    report = ExperimentReport(
        config,
        split_hash((e.sample_id, e.split) for e in dataset.manifest.entries),
        [s.sample_id for s in test_s],
        baseline,
        cells,
        timing=timing,
    )
    report.ranking = [c.key for c in rank_cells(report)]
    return report


def rank_cells(report: ExperimentReport) -> list:
    """Successful cells by ascending pooled mean error.

    Ties fall back to (modality, size, fusion, seed) in lexicographic order.
    """
    ok = [c for c in report.cells if c.ok]
    return sorted(ok, key=lambda c: (c.aggregates["mean_mm"], c.modality, c.size, c.fusion, c.seed))


def select_cases(report: ExperimentReport, key: str | None = None) -> dict:
    """Best, median (index n // 2 of the sorted list) and worst test samples of a cell.

    Samples are ordered by per-sample mean error, ties by sample id. The
    default cell is the top-ranked one.
    """
    if key is None:
        ranked = rank_cells(report)
        if not ranked:
            raise TooFewSamples("no successful cell to select cases from")
        key = ranked[0].key
    means = report.cell(key).sample_means()
    return select_from_means(means)


def select_from_means(means: dict) -> dict:
    if len(means) < 3:
        raise TooFewSamples(f"need at least 3 samples, got {len(means)}")
    order = sorted(means, key=lambda sid: (means[sid], sid))
    return {"best": order[0], "median": order[len(order) // 2], "worst": order[-1]}


@dataclass
class GeometricComparison:
    rows: list = field(default_factory=list)  # (sample_id, learned_mm, geometric_mm, flag)

    @property
    def win_rate(self) -> float:
        """Fraction of traced samples where the learned model beats the geometric tracer."""
        scored = [r for r in self.rows if r[3] == "ok" and r[1] is not None]
        if not scored:
            return float("nan")
        return sum(1 for r in scored if r[1] < r[2]) / len(scored)

    @property
    def geometric_mean_mm(self) -> float:
        vals = [r[2] for r in self.rows if r[3] == "ok"]
        return float(np.mean(vals)) if vals else float("nan")

    def format(self) -> str:
        lines = ["sample_id\tlearned_mm\tgeometric_mm\tdelta_mm\tflag"]
        for sid, learned, geo, flag in self.rows:
            ls = "nan" if learned is None else f"{learned:.4f}"
            gs = "nan" if geo is None else f"{geo:.4f}"
            ds = "nan" if learned is None or geo is None else f"{learned - geo:.4f}"
            lines.append(f"{sid}\t{ls}\t{gs}\t{ds}\t{flag}")
        lines.append(f"# win_rate\t{self.win_rate:.4f}")
        return "\n".join(lines) + "\n"


def compare_to_geometric(report: ExperimentReport | None, dataset: Dataset, rig=None, key: str | None = None,
                         dilate_px: int = 0) -> GeometricComparison:
    """Per test sample: learned mean error (from ``report``) vs the geometric tracer.

    ``dilate_px`` corrupts every mask with a binary dilation before tracing.
    Tracing failures become per-sample flags.
    """
    rig = rig or dataset.rig
    test_ids = dataset.ids("test")
    if not test_ids:
        raise TooFewSamples("the dataset has no test samples")
    learned = {}
    if report is not None:
        if key is None:
            ranked = rank_cells(report)
            key = ranked[0].key if ranked else None
        if key is not None:
            learned = report.cell(key).sample_means()
    out = GeometricComparison()
    for sid in test_ids:
        s = dataset.load(sid)
        masks = s.masks
        if dilate_px > 0:
            masks = [ndimage.binary_dilation(m, iterations=dilate_px) for m in masks]
        try:
            tr = geometric_trace(masks, rig, offsets=s.offsets, eye=s.eye)
            geo = float(np.mean(np.abs(tr.radii_mm - s.truth.radii_mm)))
            flag = "ok"
        except TraceForgeError as exc:
            geo, flag = None, f"failed:{type(exc).__name__}"
        out.rows.append((sid, learned.get(sid), geo, flag))
    return out
