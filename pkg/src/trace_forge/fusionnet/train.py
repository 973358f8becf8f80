"""Loss, gradients, deterministic mini-batch Adam training and prediction."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import DivergenceDetected, EmptyCollection, ShapeMismatch
from ..trace import FLAG_INVALID, MAX_RADIUS_MM, N_POINTS, RadialTrace, TraceNormalizer, denormalize, fit_normalizer, normalize
from .inputs import build_batch, build_input, fit_channel_stats
from .model import FusionModel, build_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 200
    seed: int = 42
    loss: str = "mse"  # or "l1"
    freeze_encoder: bool = False
    # extra augmented copies of each training sample, drawn once up front
    augment_copies: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # zero is allowed: it is the no-op run used to check the loop itself
        if not self.learning_rate >= 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss not in ("mse", "l1"):
            raise ValueError("loss must be 'mse' or 'l1'")


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_mean_mm: list = field(default_factory=list)
    train_mean_mm: list = field(default_factory=list)
    best_epoch: int = -1


def _target(target, norm: TraceNormalizer) -> np.ndarray:
    return normalize(target, norm) if isinstance(target, RadialTrace) else np.asarray(target, dtype=np.float64)


def loss_value(pred, target, norm: TraceNormalizer, kind: str = "mse") -> float:
    """Mean squared (or absolute) error between ``pred`` and ``normalize(target)``."""
    p = np.asarray(pred, dtype=np.float64)
    t = _target(target, norm)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction shape {p.shape} != target shape {t.shape}")
    d = p - t
    return float(np.mean(d * d) if kind == "mse" else np.mean(np.abs(d)))


def _loss_tensor(pred: torch.Tensor, target: torch.Tensor, kind: str) -> torch.Tensor:
    d = pred - target
    return (d * d).mean() if kind == "mse" else d.abs().mean()


def backward(model: FusionModel, inputs, target, norm: TraceNormalizer | None = None, kind: str = "mse") -> dict:
    """Loss gradient for every named parameter (numpy arrays) plus the loss itself."""
    norm = norm or model.normalizer
    x = torch.as_tensor(np.asarray(inputs, dtype=np.float64))
    if x.dim() == 4:
        x = x[None]
    targets = target if isinstance(target, (list, tuple)) else [target]
    t = torch.as_tensor(np.stack([_target(tt, norm) for tt in targets]))
    model.zero_grad(set_to_none=False)
    loss = _loss_tensor(model(x), t, kind)
    loss.backward()
    grads = {n: p.grad.detach().numpy().copy() for n, p in model.named_parameters()}
    grads["loss"] = float(loss.detach())
    return grads


def _augmented(samples, copies: int, seed: int):
    if copies <= 0:
        return list(samples)
    from ..synthgen.augment import AugmentationConfig, augment

    # no scale jitter: the depth channel ties apparent size to distance
    cfg = AugmentationConfig(scale=(1.0, 1.0))
    out = list(samples)
    for k in range(copies):
        for i, s in enumerate(samples):
            out.append(augment(s, cfg, [seed, k, i]))
    return out


def prepare(model: FusionModel, train_samples) -> None:
    """Fit the label normalizer and channel statistics on training data only."""
    if not train_samples:
        raise EmptyCollection("no training samples")
    model.normalizer = fit_normalizer([s.truth for s in train_samples])
    model.stats = fit_channel_stats(train_samples, model.modality, model.spec.input_size)


def mean_error_mm(model: FusionModel, x: np.ndarray, truth: np.ndarray) -> float:
    pred = denormalize(_predict_raw(model, x), model.normalizer)
    return float(np.mean(np.abs(pred - truth)))


def _predict_raw(model: FusionModel, x: np.ndarray, chunk: int = 32) -> np.ndarray:
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(x), chunk):
            out.append(model(torch.as_tensor(x[i : i + chunk])).numpy())
    return np.concatenate(out) if out else np.zeros((0, model.spec.n_outputs))


def train(model: FusionModel, train_samples, val_samples=(), cfg: TrainConfig = TrainConfig(), progress=None):
    """Deterministic mini-batch Adam; returns ``(best model, history)``.

    The normalizer and channel statistics are fit on ``train_samples`` when
    the model has none yet. The returned model holds the weights of the best
    validation epoch (the last epoch when there is no validation data).
    """
    torch.use_deterministic_algorithms(True)
    if model.normalizer is None or model.stats is None:
        prepare(model, list(train_samples))
    train_set = _augmented(list(train_samples), cfg.augment_copies, cfg.seed)
    x_train = build_batch(train_set, model.modality, model.stats)
    y_train = np.stack([normalize(s.truth, model.normalizer) for s in train_set])
    truth_train = np.stack([s.truth.radii_mm for s in train_samples])
    x_val = build_batch(val_samples, model.modality, model.stats) if len(val_samples) else None
    truth_val = np.stack([s.truth.radii_mm for s in val_samples]) if len(val_samples) else None

    params = [p for n, p in model.named_parameters() if not (cfg.freeze_encoder and n.startswith("convs."))]
    for n, p in model.named_parameters():
        p.requires_grad_(not (cfg.freeze_encoder and n.startswith("convs.")))
    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    best = (math.inf, copy.deepcopy(model.state_dict()))
    xt = torch.as_tensor(x_train)
    yt = torch.as_tensor(y_train)
    n_orig = len(train_samples)
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(train_set))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = torch.as_tensor(order[i : i + cfg.batch_size])
            opt.zero_grad(set_to_none=False)
            loss = _loss_tensor(model(xt[idx]), yt[idx], cfg.loss)
            if not torch.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        hist.train_loss.append(total / len(order))
        hist.train_mean_mm.append(mean_error_mm(model, x_train[:n_orig], truth_train))
        if x_val is not None:
            score = mean_error_mm(model, x_val, truth_val)
            hist.val_mean_mm.append(score)
        else:
            score = hist.train_mean_mm[-1]
        if not math.isfinite(score):
            raise DivergenceDetected(f"non-finite error at epoch {epoch}")
        if score < best[0] or x_val is None:
            best = (score, copy.deepcopy(model.state_dict()))
            hist.best_epoch = epoch
        if progress is not None:
            progress(epoch, hist)
        log.debug("epoch %d loss %.5f train %.4f mm", epoch, hist.train_loss[-1], hist.train_mean_mm[-1])
    model.load_state_dict(best[1])
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return model, hist


def predict_trace(model: FusionModel, sample) -> RadialTrace:
    """Forward pass plus denormalization; out-of-range radii are flagged, not clamped."""
    x = build_input(sample, model.modality, model.stats)
    radii = denormalize(_predict_raw(model, x[None])[0], model.normalizer)
    if radii.size != N_POINTS:
        raise ShapeMismatch(f"model produced {radii.size} radii, expected {N_POINTS}")
    bad = ~np.isfinite(radii) | (radii <= 0.0) | (radii >= MAX_RADIUS_MM)
    flags = np.where(bad, FLAG_INVALID, 0).astype(np.uint8)
    return RadialTrace(
        radii,
        angle0_rad=0.0,
        center_2d=(0.0, 0.0),
        eye=sample.eye,
        flags=flags,
        meta={"model": model.fusion, "modality": model.modality, "sample_id": sample.sample_id},
    )


def train_new(modality, fusion, size, train_samples, val_samples=(), cfg: TrainConfig = TrainConfig(), input_size=64, progress=None):
    model = build_model(modality, fusion, size, input_size, seed=cfg.seed)
    return train(model, train_samples, val_samples, cfg, progress)
