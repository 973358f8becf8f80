"""Stochastic augmentation of per-eye samples.

Geometric transforms act on every view the same way, about the crop center,
and move the ground-truth trace with them: scaling multiplies the radii,
rotating by ``alpha`` shifts the angles (``r'(t) = s * r(t - alpha)``) and
translation leaves the trace alone. The trace keeps its original center, so
a rotation by a multiple of the angular step is an exact circular shift.
Photometric transforms touch the image only; depth and mask stay intact.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline

from ..trace import RadialTrace
from .sample import MultiViewSample, View


@dataclass(frozen=True)
class AugmentationConfig:
    p_geometric: float = 0.5
    p_noise: float = 0.3
    p_color: float = 0.3
    p_blur: float = 0.3
    p_sharpness: float = 0.3
    rotation_deg: float = 10.0
    translation_frac: float = 0.04
    scale: tuple[float, float] = (0.9, 1.1)
    noise_sigma: float = 0.03
    gain: tuple[float, float] = (0.8, 1.2)
    bias: float = 0.1
    blur_sigma_px: float = 1.5
    sharpness: tuple[float, float] = (0.0, 1.5)
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("p_"):
                p = getattr(self, f.name)
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"{f.name}={p} is not a probability")

    @classmethod
    def disabled(cls, **kw) -> "AugmentationConfig":
        return cls(p_geometric=0.0, p_noise=0.0, p_color=0.0, p_blur=0.0, p_sharpness=0.0, **kw)


def transform_trace(trace: RadialTrace, rotation_rad: float = 0.0, scale: float = 1.0) -> RadialTrace:
    """Trace of the contour rotated counterclockwise by ``rotation_rad`` and scaled."""
    n = trace.radii_mm.size
    step = 2.0 * np.pi / n
    k = rotation_rad / step
    if abs(k - round(k)) < 1e-9:
        radii = np.roll(trace.radii_mm, int(round(k)))
    else:
        ext = np.append(trace.radii_mm, trace.radii_mm[0])
        spline = CubicSpline(np.arange(n + 1) * step, ext, bc_type="periodic")
        radii = spline(np.mod(trace.angles - trace.angle0_rad - rotation_rad, 2.0 * np.pi))
    radii = radii * scale
    c = np.asarray(trace.center_2d, dtype=np.float64)
    cr, sr = np.cos(rotation_rad), np.sin(rotation_rad)
    center = scale * np.array([cr * c[0] - sr * c[1], sr * c[0] + cr * c[1]])
    meta = dict(trace.meta)
    meta["augmented"] = True
    return RadialTrace(radii, trace.angle0_rad, tuple(center), trace.eye, trace.flags, meta)


def _warp_matrix(size, rotation_rad, scale, shift_px):
    """Inverse map (output pixel -> input pixel) for affine_transform, (row, col) order."""
    h, w = size
    c = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    # the in-plane y axis points up in the image, so a counterclockwise turn
    # of the contour is clockwise in (col, row) pixel coordinates
    ca, sa = np.cos(rotation_rad), np.sin(rotation_rad)
    fwd = scale * np.array([[ca, -sa], [sa, ca]])  # acts on (row, col)
    inv = np.linalg.inv(fwd)
    t = np.array([shift_px[1], shift_px[0]])
    offset = c - inv @ (c + t)
    return inv, offset


def _warp_view(view: View, inv, offset) -> View:
    img = np.stack(
        [ndimage.affine_transform(view.image[..., k], inv, offset, order=1, mode="nearest") for k in range(view.channels)],
        axis=-1,
    )
    depth = ndimage.affine_transform(view.depth, inv, offset, order=0, mode="nearest")
    mask = ndimage.affine_transform(view.mask.astype(np.uint8), inv, offset, order=0, mode="constant", cval=0)
    mask = mask.astype(bool)
    # keep depth bands consistent with the mask wherever the border fill smeared
    bg = depth[~mask]
    if mask.any() and bg.size and bg.max() >= depth[mask].min():
        depth = np.where(mask, np.maximum(depth, depth[mask].min()), np.minimum(depth, depth[mask].min() - 1))
    return View(np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0, depth, mask)


def _photometric(img, rng, cfg: AugmentationConfig, ops) -> np.ndarray:
    out = img
    if "color" in ops:
        gain, bias = ops["color"]
        out = out * gain + bias
    if "blur" in ops:
        sigma = ops["blur"]
        out = ndimage.gaussian_filter(out, sigma=(sigma, sigma, 0))
    if "sharpness" in ops:
        amount = ops["sharpness"]
        out = out + amount * (out - ndimage.gaussian_filter(out, sigma=(1.0, 1.0, 0)))
    if "noise" in ops:
        out = out + rng.normal(0.0, ops["noise"], out.shape)
    return np.rint(np.clip(out, 0.0, 1.0) * 255.0) / 255.0


def augment(sample: MultiViewSample, cfg: AugmentationConfig, rng_seed=None) -> MultiViewSample:
    """Apply each transform independently with its probability.

    Decisions and parameters are drawn once per sample and shared by the four
    views; noise fields are drawn per view. With every probability at zero the
    input is returned unchanged (a copy).
    """
    rng = np.random.default_rng(cfg.seed if rng_seed is None else rng_seed)
    out = sample.copy()
    h, w = sample.shape
    decisions = {}
    if rng.random() < cfg.p_geometric:
        rot = np.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
        scale = rng.uniform(*cfg.scale)
        shift = rng.uniform(-cfg.translation_frac, cfg.translation_frac, 2) * np.array([w, h])
        decisions["geometric"] = (rot, scale, shift)
    ops = {}
    if rng.random() < cfg.p_color:
        ops["color"] = (rng.uniform(*cfg.gain), rng.uniform(-cfg.bias, cfg.bias))
    if rng.random() < cfg.p_blur:
        ops["blur"] = rng.uniform(0.0, cfg.blur_sigma_px)
    if rng.random() < cfg.p_sharpness:
        ops["sharpness"] = rng.uniform(*cfg.sharpness)
    if rng.random() < cfg.p_noise:
        ops["noise"] = rng.uniform(0.0, cfg.noise_sigma)
    if "geometric" in decisions:
        rot, scale, shift = decisions["geometric"]
        out = apply_geometric(out, rot, scale, shift)
    if ops:
        for v in out.views:
            v.image = _photometric(v.image, rng, cfg, ops)
        decisions["photometric"] = ops
    if decisions:
        out.meta["augmentation"] = decisions
    return out


def apply_geometric(sample: MultiViewSample, rotation_rad: float = 0.0, scale: float = 1.0, shift_px=(0.0, 0.0)):
    """Rotate (counterclockwise as seen by the cameras), scale and shift every view.

    ``shift_px`` is (dx, dy) in image pixels.
    """
    inv, offset = _warp_matrix(sample.shape, rotation_rad, scale, shift_px)
    out = sample.copy()
    out.views = [_warp_view(v, inv, offset) for v in sample.views]
    out.truth = transform_trace(sample.truth, rotation_rad, scale)
    out.meta["augmented"] = True
    return out


