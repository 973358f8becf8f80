"""Binary checkpoint files.

Layout (little-endian)::

    4 bytes   magic b"TFCK"
    u32       version (1)
    u32 + n   fusion tag, UTF-8 (e.g. "late_max")
    u32 + n   modality, UTF-8
    u32       input channels
    u32       number of encoder stages S, then S x u32 stage widths
    u32 x 5   kernel, stride, head width, input size, output count
    f64 x 2   trace normalizer mean and std (mm)
    u32       channel count C, then C x f64 means and C x f64 stds
    u64       parameter count P, then P x f64 parameters in module order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import IoError, ParseError
from ..trace import TraceNormalizer
from .inputs import ChannelStats
from .model import EncoderSpec, FusionModel

MAGIC = b"TFCK"
VERSION = 1


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_checkpoint(model: FusionModel) -> bytes:
    if model.normalizer is None or model.stats is None or model.modality is None:
        raise ValueError("only prepared models (normalizer, channel stats, modality) can be saved")
    s = model.spec
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        _str(model.fusion),
        _str(model.modality),
        struct.pack("<II", s.in_channels, len(s.widths)),
        struct.pack(f"<{len(s.widths)}I", *s.widths),
        struct.pack("<5I", s.kernel, s.stride, s.head_hidden, s.input_size, s.n_outputs),
        struct.pack("<2d", model.normalizer.mean_mm, model.normalizer.std_mm),
        struct.pack("<I", len(model.stats.mean)),
        np.asarray(model.stats.mean, dtype="<f8").tobytes(),
        np.asarray(model.stats.std, dtype="<f8").tobytes(),
    ]
    flat = model.flat_parameters().astype("<f8")
    parts.append(struct.pack("<Q", flat.size))
    parts.append(flat.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ParseError("truncated checkpoint", None, self.path)
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def string(self) -> str:
        (n,) = self.take("<I")
        raw = self.take(f"<{n}s")[0]
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("bad string in checkpoint", None, self.path) from None

    def floats(self, n: int) -> np.ndarray:
        return np.array(self.take(f"<{n}d"), dtype=np.float64)


def decode_checkpoint(data: bytes, path=None) -> FusionModel:
    if data[:4] != MAGIC:
        raise ParseError("not a checkpoint file", None, path)
    r = _Reader(data, path)
    r.pos = 4
    (version,) = r.take("<I")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", None, path)
    fusion = r.string()
    modality = r.string()
    in_ch, n_stages = r.take("<II")
    widths = r.take(f"<{n_stages}I")
    kernel, stride, head, size, n_out = r.take("<5I")
    mean, std = r.take("<2d")
    (c,) = r.take("<I")
    cmean = r.floats(c)
    cstd = r.floats(c)
    (n_params,) = r.take("<Q")
    flat = r.floats(n_params)
    if r.pos != len(data):
        raise ParseError("trailing bytes after checkpoint parameters", None, path)
    try:
        spec = EncoderSpec(in_ch, tuple(widths), kernel, stride, head, size, n_out)
        stats = ChannelStats(modality, size, tuple(cmean.tolist()), tuple(cstd.tolist()))
        model = FusionModel(spec, fusion, TraceNormalizer(mean, std), modality, stats)
        model.load_flat_parameters(flat)
    except ValueError as exc:
        raise ParseError(f"inconsistent checkpoint: {exc}", None, path) from None
    model.eval()
    return model


def save_checkpoint(model: FusionModel, path) -> None:
    try:
        Path(path).write_bytes(encode_checkpoint(model))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> FusionModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data, path)
