"""Mask-first rendering of one eye frame into the four rig views.

Every pixel is classified analytically: its ray is intersected with the
frame plane and the hit point is tested against the rim annulus. Labels come
from geometry (ray casting), never from pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import NonPositiveDepth, OutOfFrustum
from ..geometry.camera import CameraRig, PinholeCamera, backproject_ray, project
from ..geometry.raycast import ray_cast_radius
from ..trace import N_POINTS, RadialTrace, trace_angles
from .contour import FrameContour
from .sample import MultiViewSample, View


@dataclass(frozen=True)
class RenderConfig:
    crop_size: int = 256
    margin_px: int = 8
    color: str = "rgb"  # or "gray"
    frame_depth_band: tuple[float, float] = (180.0, 255.0)
    background_depth_band: tuple[float, float] = (0.0, 120.0)
    depth_span_mm: float = 200.0
    texture_strength: float = 0.35
    n_shapes: int = 6

    def __post_init__(self):
        if self.color not in ("rgb", "gray"):
            raise ValueError("color must be 'rgb' or 'gray'")
        if self.frame_depth_band[0] <= self.background_depth_band[1]:
            raise ValueError("frame depth band must lie above the background band")


@dataclass(frozen=True)
class Appearance:
    """Per-scene look; shared by both eyes so crops stay consistent."""

    rim_width_mm: float = 4.0
    rim_color: tuple[float, float, float] = (0.15, 0.1, 0.08)
    skin_color: tuple[float, float, float] = (0.85, 0.68, 0.58)
    nose_clutter: bool = False
    texture_seed: int = 0


def truth_trace(contour: FrameContour, eye: str) -> RadialTrace:
    angles = trace_angles(0.0, N_POINTS)
    radii = ray_cast_radius(contour, angles)
    return RadialTrace(radii, angle0_rad=0.0, center_2d=tuple(contour.center_2d), eye=eye)


def rim_world_points(contour: FrameContour, rim_width_mm: float, n: int = 720) -> np.ndarray:
    phi = 2.0 * np.pi * np.arange(n) / n
    rho = contour.polar_radius(phi) + rim_width_mm
    uv = contour.offset_2d + rho[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    return contour.plane.to_world(uv)


def projected_rim_bounds(contour, rim_width_mm, camera: PinholeCamera):
    try:
        px = project(camera, rim_world_points(contour, rim_width_mm))
    except NonPositiveDepth:
        raise OutOfFrustum("frame reaches behind a camera") from None
    return px.min(axis=0), px.max(axis=0)


def centered_crop_origin(contour: FrameContour, camera: PinholeCamera, crop_size: int) -> np.ndarray:
    c = project(camera, contour.plane.to_world(contour.center_2d))
    return np.floor(c - crop_size / 2.0 + 0.5).astype(np.int64)


def check_crop(contour, rim_width_mm, camera, origin, cfg: RenderConfig) -> None:
    lo, hi = projected_rim_bounds(contour, rim_width_mm, camera)
    w, h = camera.image_size
    x0, y0 = origin
    s, m = cfg.crop_size, cfg.margin_px
    if x0 < 0 or y0 < 0 or x0 + s > w or y0 + s > h:
        raise OutOfFrustum("crop window leaves the camera image")
    if lo[0] < x0 + m or lo[1] < y0 + m or hi[0] > x0 + s - 1 - m or hi[1] > y0 + s - 1 - m:
        raise OutOfFrustum("rim does not fit the crop with the required margin")


def _value_noise(rng, shape, cell: int) -> np.ndarray:
    h, w = shape
    coarse = rng.random((h // cell + 3, w // cell + 3))
    fine = ndimage.zoom(coarse, cell, order=3, mode="nearest")
    return fine[:h, :w]


def _rim_hits(contour, rim_width_mm, camera, origin, size):
    ys, xs = np.mgrid[0:size, 0:size]
    px = np.stack([xs + origin[0], ys + origin[1]], axis=-1).astype(np.float64)
    o, d = backproject_ray(camera, px)
    hit, t = contour.plane.intersect(o, d)
    rel = contour.plane.to_plane(hit) - contour.offset_2d
    rho = np.hypot(rel[..., 0], rel[..., 1])
    phi = np.arctan2(rel[..., 1], rel[..., 0])
    rho_in = contour.polar_radius(phi)
    depth_mm = camera.to_camera(hit)[..., 2]
    return rho, rho_in, t, depth_mm, phi


def render_view(
    contour: FrameContour,
    camera: PinholeCamera,
    origin,
    cfg: RenderConfig,
    appearance: Appearance,
    rng: np.random.Generator,
    working_distance_mm: float,
) -> View:
    s = cfg.crop_size
    rho, rho_in, t, depth_mm, phi = _rim_hits(contour, appearance.rim_width_mm, camera, origin, s)
    w = appearance.rim_width_mm
    rim = (t > 0) & (rho >= rho_in) & (rho < rho_in + w)

    # background: skin-like texture, a few blobs and the eye behind the aperture
    noise = 0.6 * _value_noise(rng, (s, s), 16) + 0.4 * _value_noise(rng, (s, s), 5)
    skin = np.asarray(appearance.skin_color)
    img = skin * (1.0 - cfg.texture_strength + cfg.texture_strength * 2.0 * noise[..., None])
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    for _ in range(cfg.n_shapes):
        cx, cy = rng.uniform(0, s, 2)
        ax, ay = rng.uniform(0.05, 0.3, 2) * s
        inside = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2 < 1.0
        img[inside] = img[inside] * 0.5 + 0.5 * rng.uniform(0.1, 0.9, 3)
    inner = (t > 0) & (rho < rho_in)
    # eye: sclera and iris centered in the aperture
    eye_r = rho / np.maximum(rho_in, 1e-9)
    sclera = inner & (np.hypot(rho * np.cos(phi) / 1.6, rho * np.sin(phi)) < 0.45 * rho_in.mean())
    img[sclera] = 0.92
    iris = inner & (rho < 0.18 * rho_in.mean())
    img[iris] = np.asarray([0.25, 0.18, 0.1]) * (0.7 + 0.3 * eye_r[iris, None])
    bg_depth = cfg.background_depth_band[0] + 0.2 * np.ptp(cfg.background_depth_band) + 0.7 * np.ptp(
        cfg.background_depth_band
    ) * _value_noise(rng, (s, s), 32)
    if appearance.nose_clutter:
        # nasal side of the aperture is toward world x = 0
        nasal = contour.plane.to_world(contour.offset_2d)[0] > 0
        ang = np.pi if nasal else 0.0
        r_in = float(contour.polar_radius(np.array([ang]))[0])
        tip = contour.offset_2d + (r_in - 0.25 * w) * np.array([np.cos(ang), np.sin(ang)])
        rel = contour.plane.to_plane(contour.plane.intersect(*backproject_ray(
            camera, np.stack([xs + origin[0], ys + origin[1]], axis=-1)))[0])
        nose = np.hypot((rel[..., 0] - tip[0]) / 6.0, (rel[..., 1] - tip[1] - 8.0) / 14.0) < 1.0
        img[nose] = np.clip(skin * 1.15, 0.0, 1.0)
        bg_depth = np.where(nose, cfg.background_depth_band[1] - 2.0, bg_depth)

    # rim: bevelled dark frame
    frac = np.clip((rho - rho_in) / w, 0.0, 1.0)
    shade = 0.55 + 0.45 * np.sin(np.pi * frac)
    rim_rgb = np.asarray(appearance.rim_color)[None, :] * shade[rim][:, None] + 0.08 * frac[rim][:, None]
    img[rim] = rim_rgb
    img = np.clip(img, 0.0, 1.0)
    if cfg.color == "gray":
        img = (img @ np.array([0.299, 0.587, 0.114]))[..., None]
    img = np.rint(img * 255.0) / 255.0

    lo_f, hi_f = cfg.frame_depth_band
    z_near = working_distance_mm - cfg.depth_span_mm / 2.0
    closeness = np.clip((z_near + cfg.depth_span_mm - depth_mm) / cfg.depth_span_mm, 0.0, 1.0)
    depth = np.where(rim, lo_f + (hi_f - lo_f) * closeness, np.clip(bg_depth, *cfg.background_depth_band))
    depth = np.rint(depth)
    return View(img, depth, rim)


def render_views(
    contour: FrameContour,
    rig: CameraRig,
    render_cfg: RenderConfig = RenderConfig(),
    eye: str = "right",
    appearance: Appearance = Appearance(),
    rng_seed: int = 0,
    sample_id: str = "sample",
    crop_origins=None,
) -> MultiViewSample:
    """Render one eye into all four views as fixed-size crops.

    Crops are centered on the projected boxing center unless
    ``crop_origins`` (per-view top-left pixel) is given.
    """
    origins = []
    for i, cam in enumerate(rig.cameras):
        if crop_origins is None:
            try:
                o = centered_crop_origin(contour, cam, render_cfg.crop_size)
            except NonPositiveDepth:
                raise OutOfFrustum("frame center is behind a camera") from None
        else:
            o = np.asarray(crop_origins[i], dtype=np.int64)
        check_crop(contour, appearance.rim_width_mm, cam, o, render_cfg)
        origins.append(o)
    views = []
    eye_code = 0 if eye == "right" else 1
    for i, cam in enumerate(rig.cameras):
        rng = np.random.default_rng([appearance.texture_seed, i, eye_code])
        views.append(render_view(contour, cam, origins[i], render_cfg, appearance, rng, rig.working_distance_mm))
    return MultiViewSample(
        views,
        truth_trace(contour, eye),
        eye,
        sample_id,
        rng_seed,
        np.array(origins),
        rig.working_distance_mm / float(np.mean([c.focal_length_px for c in rig.cameras])),
        meta={"family": contour.family},
    )
