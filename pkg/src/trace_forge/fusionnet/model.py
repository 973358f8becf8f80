"""Shared-encoder multi-view regressor with early or late view fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import ShapeMismatch
from ..trace import N_POINTS, TraceNormalizer
from .inputs import CHANNELS, DEFAULT_INPUT_SIZE, ChannelStats, check_modality

N_VIEWS = 4
SIZES = {"S": 1.0, "M": 1.5, "L": 2.0}
BASE_WIDTHS = (16, 32, 64, 96, 128)
FUSIONS = ("early_max", "early_learned", "late_max", "late_learned")
# early fusion happens after this many encoder stages (the penultimate one)
EARLY_STAGE = 4
DTYPE = torch.float64


@dataclass(frozen=True)
class EncoderSpec:
    in_channels: int
    widths: tuple = BASE_WIDTHS
    kernel: int = 3
    stride: int = 2
    head_hidden: int = 256
    input_size: int = DEFAULT_INPUT_SIZE
    n_outputs: int = N_POINTS

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("the encoder needs at least two stages")
        if any(w < 1 for w in self.widths) or self.in_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    @classmethod
    def sized(cls, in_channels: int, size: str = "S", input_size: int = DEFAULT_INPUT_SIZE) -> "EncoderSpec":
        if size not in SIZES:
            raise ValueError(f"unknown model size {size!r}")
        k = SIZES[size]
        return cls(in_channels, tuple(int(round(w * k)) for w in BASE_WIDTHS), input_size=input_size)


def parse_fusion(name: str) -> tuple[str, str]:
    if name not in FUSIONS:
        raise ValueError(f"unknown fusion {name!r}; expected one of {', '.join(FUSIONS)}")
    stage, comb = name.split("_")
    return stage, comb


def view_max(x: torch.Tensor, dim: int) -> torch.Tensor:
    """Max over views; on ties the lowest view index receives the gradient."""
    idx = torch.argmax(x, dim=dim, keepdim=True)
    return torch.gather(x, dim, idx).squeeze(dim)


class FusionModel(nn.Module):
    """Four views through one encoder, fused early or late, then an MLP head.

    Input shape is (batch, 4, C, s, s); output is (batch, 600) normalized radii.
    """

    def __init__(
        self,
        spec: EncoderSpec,
        fusion: str = "late_max",
        normalizer: TraceNormalizer | None = None,
        modality: str | None = None,
        stats: ChannelStats | None = None,
        seed: int = 0,
    ):
        super().__init__()
        self.spec = spec
        self.fusion = fusion
        self.stage, self.combiner = parse_fusion(fusion)
        self.normalizer = normalizer
        self.modality = modality
        self.stats = stats
        w = (spec.in_channels,) + tuple(spec.widths)
        pad = spec.kernel // 2
        self.convs = nn.ModuleList(
            nn.Conv2d(w[i], w[i + 1], spec.kernel, spec.stride, pad, dtype=DTYPE) for i in range(len(spec.widths))
        )
        d = spec.feature_dim
        if self.combiner == "learned":
            if self.stage == "early":
                c = spec.widths[EARLY_STAGE - 1]
                self.view_combiner = nn.Conv2d(N_VIEWS * c, c, 1, dtype=DTYPE)
            else:
                self.view_combiner = nn.Linear(N_VIEWS * d, d, dtype=DTYPE)
        self.hidden = nn.Linear(d, spec.head_hidden, dtype=DTYPE)
        self.out = nn.Linear(spec.head_hidden, spec.n_outputs, dtype=DTYPE)
        self.reset_parameters(seed)

    # -- parameters -------------------------------------------------------
    def reset_parameters(self, seed: int = 0) -> None:
        """Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases."""
        rng = np.random.default_rng(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("bias"):
                    p.zero_()
                    continue
                fan_in = int(np.prod(p.shape[1:]))
                bound = math.sqrt(6.0 / fan_in)
                p.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(p.shape))))

    def set_identity_combiner(self) -> None:
        """Learned combiner that averages the views (equal to any single view when all match)."""
        if self.combiner != "learned":
            raise ValueError("only learned combiners have weights")
        with torch.no_grad():
            m = self.view_combiner
            m.bias.zero_()
            n = m.weight.shape[0]
            eye = torch.eye(n, dtype=DTYPE) / N_VIEWS
            if self.stage == "early":
                m.weight.copy_(torch.cat([eye] * N_VIEWS, dim=1)[:, :, None, None])
            else:
                m.weight.copy_(torch.cat([eye] * N_VIEWS, dim=1))

    def encoder_parameters(self):
        return list(self.convs.parameters())

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.detach().numpy().reshape(-1) for p in self.parameters()])

    def load_flat_parameters(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        n = sum(p.numel() for p in self.parameters())
        if flat.size != n:
            raise ShapeMismatch(f"expected {n} parameters, got {flat.size}")
        pos = 0
        with torch.no_grad():
            for p in self.parameters():
                k = p.numel()
                p.copy_(torch.from_numpy(flat[pos : pos + k].reshape(p.shape)))
                pos += k

    # -- forward ----------------------------------------------------------
    def _stages(self, x, start: int, stop: int):
        for conv in self.convs[start:stop]:
            x = F.silu(conv(x))
        return x

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Single-view feature vector, input (batch, C, s, s)."""
        return self._stages(x, 0, len(self.convs)).mean(dim=(-2, -1))

    def head(self, f: torch.Tensor) -> torch.Tensor:
        return self.out(F.silu(self.hidden(f)))

    def single_view(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encode(x))

    def check_input(self, x: torch.Tensor) -> None:
        s = self.spec
        if x.dim() != 5 or tuple(x.shape[1:]) != (N_VIEWS, s.in_channels, s.input_size, s.input_size):
            raise ShapeMismatch(
                f"expected input (batch, {N_VIEWS}, {s.in_channels}, {s.input_size}, {s.input_size}), "
                f"got {tuple(x.shape)}"
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        b = x.shape[0]
        # each view is a separate pass through the same weights
        views = [x[:, v] for v in range(N_VIEWS)]
        if self.stage == "late":
            feats = torch.stack([self.encode(v) for v in views], dim=1)  # (b, 4, D)
            fused = view_max(feats, 1) if self.combiner == "max" else self.view_combiner(feats.reshape(b, -1))
            return self.head(fused)
        maps = torch.stack([self._stages(v, 0, EARLY_STAGE) for v in views], dim=1)  # (b, 4, c, h, w)
        if self.combiner == "max":
            fused = view_max(maps, 1)
        else:
            fused = self.view_combiner(maps.reshape(b, -1, *maps.shape[-2:]))
        f = self._stages(fused, EARLY_STAGE, len(self.convs)).mean(dim=(-2, -1))
        return self.head(f)


def build_model(
    modality: str,
    fusion: str = "late_max",
    size: str = "S",
    input_size: int = DEFAULT_INPUT_SIZE,
    seed: int = 0,
    normalizer: TraceNormalizer | None = None,
    stats: ChannelStats | None = None,
) -> FusionModel:
    spec = EncoderSpec.sized(CHANNELS[check_modality(modality)], size, input_size)
    return FusionModel(spec, fusion, normalizer, modality, stats, seed)


def forward(model: FusionModel, inputs) -> np.ndarray:
    """Normalized radii for one sample's (4, C, s, s) input or a batch of them."""
    x = torch.as_tensor(np.asarray(inputs, dtype=np.float64))
    single = x.dim() == 4
    if single:
        x = x[None]
    with torch.no_grad():
        y = model(x).numpy()
    return y[0] if single else y
