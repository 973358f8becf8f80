"""Radial trace data model, label normalization, text format and error metrics.

A trace is 600 radii (mm) sampled at uniform angles, counterclockwise as seen
from the cameras, starting at ``angle0_rad`` measured from the frame plane's
+x axis. The on-disk format stores radii as integer hundredths of a millimetre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AngleMismatch,
    CountMismatch,
    EmptyCollection,
    InvalidTrace,
    IoError,
    ParseError,
    ShapeMismatch,
    ZeroStd,
)

N_POINTS = 600
MAX_RADIUS_MM = 100.0
FORMAT_VERSION = 1
EYES = ("right", "left")

# per-point flag bits
FLAG_OCCLUDED = 1
FLAG_INVALID = 2

_MIN_STD = 1e-6


@dataclass(frozen=True)
class RadialTrace:
    radii_mm: np.ndarray
    angle0_rad: float = 0.0
    center_2d: tuple[float, float] = (0.0, 0.0)
    eye: str = "right"
    flags: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        radii = np.array(self.radii_mm, dtype=np.float64).reshape(-1)
        if radii.shape != (N_POINTS,):
            raise CountMismatch(f"trace needs {N_POINTS} radii, got {radii.size}")
        flags = (
            np.zeros(N_POINTS, dtype=np.uint8)
            if self.flags is None
            else np.array(self.flags, dtype=np.uint8).reshape(-1)
        )
        if flags.shape != (N_POINTS,):
            raise CountMismatch(f"trace needs {N_POINTS} flags, got {flags.size}")
        if self.eye not in EYES:
            raise InvalidTrace(f"eye must be one of {EYES}, got {self.eye!r}")
        bad = ~np.isfinite(radii) | (radii <= 0) | (radii >= MAX_RADIUS_MM)
        if np.any(bad & ((flags & FLAG_INVALID) == 0)):
            idx = int(np.flatnonzero(bad & ((flags & FLAG_INVALID) == 0))[0])
            raise InvalidTrace(f"radius {radii[idx]!r} at index {idx} outside (0, {MAX_RADIUS_MM}) mm")
        radii.flags.writeable = False
        flags.flags.writeable = False
        object.__setattr__(self, "radii_mm", radii)
        object.__setattr__(self, "flags", flags)
        object.__setattr__(self, "angle0_rad", float(self.angle0_rad))
        object.__setattr__(self, "center_2d", (float(self.center_2d[0]), float(self.center_2d[1])))

    @property
    def angles(self) -> np.ndarray:
        return trace_angles(self.angle0_rad)

    def points_2d(self) -> np.ndarray:
        """Trace vertices in frame-plane coordinates (mm), shape (600, 2)."""
        a = self.angles
        c = np.asarray(self.center_2d)
        return c + self.radii_mm[:, None] * np.stack([np.cos(a), np.sin(a)], axis=1)

    def with_radii(self, radii_mm, **changes) -> "RadialTrace":
        kw = dict(
            angle0_rad=self.angle0_rad,
            center_2d=self.center_2d,
            eye=self.eye,
            flags=self.flags,
            meta=dict(self.meta),
        )
        kw.update(changes)
        return RadialTrace(radii_mm, **kw)

    def __eq__(self, other):
        if not isinstance(other, RadialTrace):
            return NotImplemented
        return (
            np.array_equal(self.radii_mm, other.radii_mm)
            and self.angle0_rad == other.angle0_rad
            and self.center_2d == other.center_2d
            and self.eye == other.eye
            and np.array_equal(self.flags, other.flags)
        )

    __hash__ = None


def trace_angles(angle0_rad: float = 0.0, n: int = N_POINTS) -> np.ndarray:
    return angle0_rad + 2.0 * np.pi * np.arange(n) / n


# ---------------------------------------------------------------------------
# Label normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceNormalizer:
    mean_mm: float
    std_mm: float


def _radii(x) -> np.ndarray:
    if isinstance(x, RadialTrace):
        return x.radii_mm
    return np.asarray(x, dtype=np.float64)


def normalize(trace, norm: TraceNormalizer) -> np.ndarray:
    if not norm.std_mm > _MIN_STD:
        raise ZeroStd(f"normalizer std {norm.std_mm!r} <= {_MIN_STD}")
    return (_radii(trace) - norm.mean_mm) / norm.std_mm


def denormalize(values, norm: TraceNormalizer) -> np.ndarray:
    if not norm.std_mm > _MIN_STD:
        raise ZeroStd(f"normalizer std {norm.std_mm!r} <= {_MIN_STD}")
    return np.asarray(values, dtype=np.float64) * norm.std_mm + norm.mean_mm


def fit_normalizer(traces: Iterable) -> TraceNormalizer:
    """Population mean and std over every radius of every trace."""
    arrays = [_radii(t).reshape(-1) for t in traces]
    if not arrays:
        raise EmptyCollection("cannot fit a normalizer on zero traces")
    flat = np.concatenate(arrays)
    mean = float(np.mean(flat))
    std = float(np.sqrt(np.mean((flat - mean) ** 2)))
    return TraceNormalizer(mean, std)


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def format_trace(trace: RadialTrace) -> str:
    if np.any(trace.flags & FLAG_INVALID):
        raise InvalidTrace("refusing to serialize a trace with invalid points")
    hundredths = np.rint(trace.radii_mm * 100.0).astype(np.int64)
    angle0_urad = int(round(trace.angle0_rad * 1e6))
    lines = [f"TRACE {FORMAT_VERSION}", f"eye {trace.eye}", f"angle0_urad {angle0_urad}"]
    lines.extend(str(int(v)) for v in hundredths)
    return "\n".join(lines) + "\n"


def write_trace(trace: RadialTrace, path) -> None:
    data = format_trace(trace).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(f"cannot write trace {path}: {exc}") from exc


def parse_trace(text: str, path=None) -> RadialTrace:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def header(lineno: int, key: str) -> str:
        if len(lines) < lineno:
            raise ParseError(f"missing header line '{key}'", lineno, path)
        parts = lines[lineno - 1].split()
        if len(parts) != 2 or parts[0] != key:
            raise ParseError(f"expected '{key} <value>', got {lines[lineno - 1]!r}", lineno, path)
        return parts[1]

    version = header(1, "TRACE")
    if version != str(FORMAT_VERSION):
        raise ParseError(f"unsupported trace format version {version}", 1, path)
    eye = header(2, "eye")
    if eye not in EYES:
        raise ParseError(f"unknown eye {eye!r}", 2, path)
    try:
        angle0_urad = int(header(3, "angle0_urad"))
    except ValueError:
        raise ParseError("angle0_urad must be an integer", 3, path) from None
    body = lines[3:]
    values = []
    for i, raw in enumerate(body, start=4):
        s = raw.strip()
        if not s.lstrip("-").isdigit():
            raise ParseError(f"expected integer hundredths of mm, got {raw!r}", i, path)
        values.append(int(s))
    if len(values) != N_POINTS:
        raise CountMismatch(f"{path or 'trace'}: expected {N_POINTS} radii, found {len(values)}")
    radii = np.array(values, dtype=np.float64) / 100.0
    try:
        return RadialTrace(radii, angle0_rad=angle0_urad * 1e-6, eye=eye)
    except InvalidTrace as exc:
        raise ParseError(str(exc), None, path) from None


def read_trace(path) -> RadialTrace:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read trace {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ParseError("trace file is not UTF-8", None, path) from None
    return parse_trace(text, path)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceErrorReport:
    """Aggregate radial errors over every point of one or more samples.

    ``per_point_abs_err`` has shape (n_samples, 600). The aggregates pool all
    points; ``sample_means`` keeps the per-sample view.
    """

    min_mm: float
    max_mm: float
    mean_mm: float
    median_mm: float
    frac_under_1mm: float
    per_point_abs_err: np.ndarray

    @classmethod
    def from_errors(cls, abs_err) -> "TraceErrorReport":
        err = np.atleast_2d(np.asarray(abs_err, dtype=np.float64))
        if err.size == 0:
            raise EmptyCollection("no errors to aggregate")
        flat = err.reshape(-1)
        return cls(
            min_mm=float(flat.min()),
            max_mm=float(flat.max()),
            mean_mm=float(flat.mean()),
            median_mm=float(np.median(flat)),
            frac_under_1mm=float(np.count_nonzero(flat < 1.0) / flat.size),
            per_point_abs_err=err,
        )

    @property
    def sample_means(self) -> np.ndarray:
        return self.per_point_abs_err.mean(axis=1)


def _check_compatible(pred: RadialTrace, truth: RadialTrace) -> None:
    if pred.eye != truth.eye:
        raise AngleMismatch(f"eye mismatch: {pred.eye} vs {truth.eye}")
    if not math.isclose(pred.angle0_rad, truth.angle0_rad, rel_tol=0.0, abs_tol=1e-9):
        raise AngleMismatch(f"angle0 mismatch: {pred.angle0_rad} vs {truth.angle0_rad}")


def trace_error(pred: RadialTrace, truth: RadialTrace) -> TraceErrorReport:
    _check_compatible(pred, truth)
    return TraceErrorReport.from_errors(np.abs(pred.radii_mm - truth.radii_mm)[None, :])


def pooled_error(pairs: Sequence[tuple[RadialTrace, RadialTrace]]) -> TraceErrorReport:
    rows = []
    for pred, truth in pairs:
        _check_compatible(pred, truth)
        rows.append(np.abs(pred.radii_mm - truth.radii_mm))
    if not rows:
        raise EmptyCollection("no trace pairs")
    return TraceErrorReport.from_errors(np.stack(rows))


def mask_iou(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union
