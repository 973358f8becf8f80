"""Per-eye multi-view samples and their binary container.

Container layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"TFSAMPLE"
    8       4     u32 format version (1)
    12      4     u32 n_views (4)
    16      4     u32 height
    20      4     u32 width
    24      4     u32 image channels C (1 or 3)
    28      4     u32 eye (0 = right, 1 = left)
    32      8     u64 rng seed
    40      8     f64 nominal mm per pixel
    48      8*V   i32 x0, i32 y0 crop offset of each view in its camera image
    ...     4     u32 length L of the sample id
    ...     L     sample id, UTF-8
    then, for each view in order, row-major uint8 planes:
            C image planes (value * 255), 1 depth plane, 1 mask plane (0/1)

Images and depth are quantized to 1/255 and integer levels at render time,
so the container round trip is lossless.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import IoError, ParseError, ShapeMismatch
from ..trace import RadialTrace

MAGIC = b"TFSAMPLE"
CONTAINER_VERSION = 1
N_VIEWS = 4
_EYE_CODE = {"right": 0, "left": 1}
_HEAD = struct.Struct("<8sIIIIIIQd")


@dataclass(eq=False)
class View:
    image: np.ndarray  # (H, W, C) in [0, 1]
    depth: np.ndarray  # (H, W) in [0, 255], closer = higher
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.ndim == 2:
            self.image = self.image[:, :, None]
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        h, w = self.mask.shape
        if self.image.shape[:2] != (h, w) or self.depth.shape != (h, w):
            raise ShapeMismatch("image, depth and mask must share dimensions")

    @property
    def channels(self) -> int:
        return self.image.shape[2]

    def copy(self) -> "View":
        return View(self.image.copy(), self.depth.copy(), self.mask.copy())


@dataclass(eq=False)
class MultiViewSample:
    views: list
    truth: RadialTrace
    eye: str
    sample_id: str
    rng_seed: int
    offsets: np.ndarray = field(default_factory=lambda: np.zeros((N_VIEWS, 2), dtype=np.int64))
    mm_per_px: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.views) != N_VIEWS:
            raise ShapeMismatch(f"a sample has {N_VIEWS} views, got {len(self.views)}")
        shapes = {(v.image.shape, v.depth.shape) for v in self.views}
        if len(shapes) != 1:
            raise ShapeMismatch("all four views must share dimensions")
        self.offsets = np.asarray(self.offsets, dtype=np.int64).reshape(N_VIEWS, 2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.views[0].mask.shape

    @property
    def channels(self) -> int:
        return self.views[0].channels

    @property
    def masks(self) -> list[np.ndarray]:
        return [v.mask for v in self.views]

    def copy(self) -> "MultiViewSample":
        return MultiViewSample(
            [v.copy() for v in self.views],
            self.truth,
            self.eye,
            self.sample_id,
            self.rng_seed,
            self.offsets.copy(),
            self.mm_per_px,
            dict(self.meta),
        )


def encode_sample(sample: MultiViewSample) -> bytes:
    h, w = sample.shape
    c = sample.channels
    sid = sample.sample_id.encode("utf-8")
    parts = [
        _HEAD.pack(MAGIC, CONTAINER_VERSION, N_VIEWS, h, w, c, _EYE_CODE[sample.eye],
                   int(sample.rng_seed) & 0xFFFFFFFFFFFFFFFF, float(sample.mm_per_px)),
        np.asarray(sample.offsets, dtype="<i4").tobytes(),
        struct.pack("<I", len(sid)),
        sid,
    ]
    for v in sample.views:
        img = np.rint(np.clip(v.image, 0.0, 1.0) * 255.0).astype(np.uint8)
        parts.append(np.ascontiguousarray(np.moveaxis(img, 2, 0)).tobytes())
        parts.append(np.rint(np.clip(v.depth, 0.0, 255.0)).astype(np.uint8).tobytes())
        parts.append(v.mask.astype(np.uint8).tobytes())
    return b"".join(parts)


def decode_sample(data: bytes, truth: RadialTrace, path=None) -> MultiViewSample:
    if len(data) < _HEAD.size or data[:8] != MAGIC:
        raise ParseError("not a trace-forge sample container", None, path)
    magic, version, n_views, h, w, c, eye_code, seed, mmpp = _HEAD.unpack_from(data, 0)
    if version != CONTAINER_VERSION:
        raise ParseError(f"unsupported container version {version}", None, path)
    if n_views != N_VIEWS or c not in (1, 3) or eye_code not in (0, 1):
        raise ParseError("corrupt container header", None, path)
    pos = _HEAD.size
    offsets = np.frombuffer(data, dtype="<i4", count=2 * n_views, offset=pos).reshape(n_views, 2)
    pos += 8 * n_views
    (id_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    sid = data[pos : pos + id_len].decode("utf-8")
    pos += id_len
    plane = h * w
    expected = pos + n_views * plane * (c + 2)
    if len(data) != expected:
        raise ParseError(f"container size {len(data)} != expected {expected}", None, path)
    views = []
    for _ in range(n_views):
        img = np.frombuffer(data, dtype=np.uint8, count=c * plane, offset=pos).reshape(c, h, w)
        pos += c * plane
        depth = np.frombuffer(data, dtype=np.uint8, count=plane, offset=pos).reshape(h, w)
        pos += plane
        mask = np.frombuffer(data, dtype=np.uint8, count=plane, offset=pos).reshape(h, w)
        pos += plane
        views.append(View(np.moveaxis(img, 0, 2) / 255.0, depth.astype(np.float64), mask != 0))
    eye = "right" if eye_code == 0 else "left"
    return MultiViewSample(views, truth, eye, sid, seed, offsets.astype(np.int64), mmpp)


def write_sample(sample: MultiViewSample, path) -> None:
    try:
        Path(path).write_bytes(encode_sample(sample))
    except OSError as exc:
        raise IoError(f"cannot write sample {path}: {exc}") from exc


def read_sample(path, truth: RadialTrace) -> MultiViewSample:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read sample {path}: {exc}") from exc
    return decode_sample(data, truth, path)
