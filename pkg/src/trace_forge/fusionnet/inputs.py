"""Per-view network inputs for the three modalities.

Masked modalities zero everything outside the rim mask at full resolution,
then block-average down to the network size, normalize each channel with
training statistics and zero the background again. Background pixels of the
raw sample therefore never reach the network.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInputWarning, EmptyCollection, ModalityMismatch, ShapeMismatch
from ..synthgen.sample import MultiViewSample

MODALITIES = ("rgb_noseg", "gray_depth", "rgb_depth")
CHANNELS = {"rgb_noseg": 3, "gray_depth": 2, "rgb_depth": 4}
LUMA = np.array([0.299, 0.587, 0.114])
DEFAULT_INPUT_SIZE = 64


def check_modality(modality: str) -> str:
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}; expected one of {', '.join(MODALITIES)}")
    return modality


def is_masked(modality: str) -> bool:
    return check_modality(modality) != "rgb_noseg"


@dataclass(frozen=True)
class ChannelStats:
    modality: str
    input_size: int
    mean: tuple
    std: tuple

    def __post_init__(self):
        check_modality(self.modality)
        if len(self.mean) != CHANNELS[self.modality] or len(self.std) != CHANNELS[self.modality]:
            raise ShapeMismatch("channel statistics do not match the modality")


def _planes(sample: MultiViewSample, modality: str) -> np.ndarray:
    """Full-resolution channel planes, shape (4, C, H, W), background zeroed if masked."""
    check_modality(modality)
    c = sample.channels
    if modality in ("rgb_noseg", "rgb_depth") and c != 3:
        raise ModalityMismatch(f"{modality} needs RGB images, sample has {c} channel(s)")
    out = []
    for v in sample.views:
        if modality == "gray_depth":
            gray = v.image[..., 0] if c == 1 else v.image @ LUMA
            chans = [gray, v.depth]
        elif modality == "rgb_depth":
            chans = [v.image[..., 0], v.image[..., 1], v.image[..., 2], v.depth]
        else:
            chans = [v.image[..., 0], v.image[..., 1], v.image[..., 2]]
        p = np.stack(chans)
        if modality != "rgb_noseg":
            p = np.where(v.mask[None], p, 0.0)
        out.append(p)
    return np.stack(out)


def _block(x: np.ndarray, size: int, reduce) -> np.ndarray:
    h, w = x.shape[-2:]
    if h % size or w % size:
        raise ShapeMismatch(f"crop {h}x{w} is not a multiple of the input size {size}")
    fy, fx = h // size, w // size
    return reduce(x.reshape(*x.shape[:-2], size, fy, size, fx), axis=(-3, -1))


def raw_input(sample: MultiViewSample, modality: str, input_size: int = DEFAULT_INPUT_SIZE):
    """Downsampled, unnormalized planes and the low-resolution mask (4, h, w)."""
    planes = _block(_planes(sample, modality), input_size, np.mean)
    lowmask = _block(np.stack([v.mask for v in sample.views]), input_size, np.any)
    return planes, lowmask


def fit_channel_stats(samples, modality: str, input_size: int = DEFAULT_INPUT_SIZE) -> ChannelStats:
    """Per-channel mean and std over all pixels of the (masked) training planes.

    The zeroed background takes part, so after normalization the rim stands
    well clear of the background, which is reset to exactly zero.
    """
    n = CHANNELS[check_modality(modality)]
    total = np.zeros(n)
    total_sq = np.zeros(n)
    count = 0
    for smp in samples:
        planes, _ = raw_input(smp, modality, input_size)
        vals = np.moveaxis(planes, 1, 0).reshape(n, -1)
        total += vals.sum(axis=1)
        total_sq += (vals**2).sum(axis=1)
        count += vals.shape[1]
    if count == 0:
        raise EmptyCollection("no pixels to fit channel statistics on")
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean**2, 0.0))
    std = np.where(std > 1e-8, std, 1.0)
    return ChannelStats(modality, input_size, tuple(float(v) for v in mean), tuple(float(v) for v in std))


def build_input(sample: MultiViewSample, modality: str, stats: ChannelStats) -> np.ndarray:
    """Network input of one sample, shape (4, C, s, s), float64."""
    if stats.modality != modality:
        raise ModalityMismatch(f"statistics were fit for {stats.modality}, not {modality}")
    planes, lowmask = raw_input(sample, modality, stats.input_size)
    mean = np.asarray(stats.mean)[None, :, None, None]
    std = np.asarray(stats.std)[None, :, None, None]
    x = (planes - mean) / std
    if is_masked(modality):
        if not lowmask.reshape(lowmask.shape[0], -1).any(axis=1).all():
            warnings.warn(f"sample {sample.sample_id} has a view with an empty mask", DegenerateInputWarning)
        x = np.where(lowmask[:, None], x, 0.0)
    return x


def build_batch(samples, modality: str, stats: ChannelStats) -> np.ndarray:
    return np.stack([build_input(s, modality, stats) for s in samples])
