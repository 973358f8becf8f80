"""Random frames and two-eye scenes, split into per-eye samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GenerationFailed, NonPositiveDepth, NotStarShaped, OutOfFrustum, OverlapError
from ..geometry.camera import CameraRig, FramePlane, project, tilted_plane
from .contour import FAMILIES, MAX_FOURIER_ORDER, FrameContour
from .render import Appearance, RenderConfig, check_crop, projected_rim_bounds, render_views

MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class ContourConfig:
    family_weights: tuple[float, float, float, float] = (0.15, 0.25, 0.35, 0.25)
    circle_radius_mm: tuple[float, float] = (16.0, 24.0)
    a_mm: tuple[float, float] = (20.0, 28.0)
    b_mm: tuple[float, float] = (13.0, 22.0)
    exponent: tuple[float, float] = (2.5, 5.0)
    fourier_amplitude: float = 0.08
    rotation_deg: float = 8.0

    def __post_init__(self):
        w = np.asarray(self.family_weights, dtype=np.float64)
        if w.shape != (len(FAMILIES),) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("family_weights needs one non-negative weight per family")
        if not 0.0 <= self.fourier_amplitude <= 0.1:
            raise ValueError("fourier_amplitude must lie in [0, 0.1]")


@dataclass(frozen=True)
class SceneConfig:
    contour: ContourConfig = ContourConfig()
    bridge_mm: tuple[float, float] = (14.0, 22.0)
    rim_width_mm: tuple[float, float] = (2.0, 6.0)
    # the rim must leave this much room to the nose midline
    nasal_clearance_mm: float = 3.5
    wrap_deg: tuple[float, float] = (0.0, 6.0)
    pitch_deg: tuple[float, float] = (-4.0, 4.0)
    depth_jitter_mm: float = 15.0
    lateral_jitter_mm: float = 3.0
    vertical_jitter_mm: float = 3.0
    nose_clutter_prob: float = 0.3


@dataclass(frozen=True, eq=False)
class Scene:
    """Both apertures of one frame on one face."""

    right: FrameContour
    left: FrameContour
    appearance: Appearance
    rng_seed: int = 0
    meta: dict = field(default_factory=dict)


def _centered(contour: FrameContour) -> FrameContour:
    """Shift the shape so its boxing center sits at the plane origin."""
    c = contour.center_2d
    return FrameContour(
        contour.family,
        dict(contour.params),
        plane=contour.plane,
        offset_2d=contour.offset_2d - c,
        rotation_rad=contour.rotation_rad,
        mirrored=contour.mirrored,
    )


def _draw(rng: np.random.Generator, cfg: ContourConfig, family: str) -> FrameContour:
    rot = np.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    if family == "circle":
        return FrameContour.circle(rng.uniform(*cfg.circle_radius_mm))
    a = rng.uniform(*cfg.a_mm)
    b = min(rng.uniform(*cfg.b_mm), a)
    if family == "ellipse":
        return FrameContour.ellipse(a, b, rotation_rad=rot)
    n = rng.uniform(*cfg.exponent)
    if family == "superellipse":
        return FrameContour.superellipse(a, b, n, rotation_rad=rot)
    order = int(rng.integers(1, MAX_FOURIER_ORDER + 1))
    raw = rng.normal(size=(2, order)) / np.arange(1, order + 1)
    raw *= rng.uniform(0.3, 1.0) * cfg.fourier_amplitude / np.sum(np.abs(raw))
    return FrameContour(
        "fourier",
        {"a": a, "b": b, "exponent": n, "cos": raw[0], "sin": raw[1]},
        rotation_rad=rot,
    )


def sample_contour(rng_seed, cfg: ContourConfig = ContourConfig(), family: str | None = None) -> FrameContour:
    """Random star-shaped inner contour, boxing-centered in a frontal plane.

    Candidates failing the star-shape check are redrawn; after 100 failures
    ``GenerationFailed`` is raised.
    """
    if family is not None and family not in FAMILIES:
        raise ValueError(f"unknown contour family {family!r}")
    rng = np.random.default_rng(rng_seed)
    weights = np.asarray(cfg.family_weights, dtype=np.float64)
    for _ in range(MAX_ATTEMPTS):
        fam = family or FAMILIES[int(rng.choice(len(FAMILIES), p=weights / weights.sum()))]
        try:
            contour = _centered(_draw(rng, cfg, fam))
            contour.check_star_shaped()
        except (NotStarShaped, ValueError):
            continue
        return contour
    raise GenerationFailed(f"no valid contour after {MAX_ATTEMPTS} attempts")


def _placed(shape: FrameContour, plane: FramePlane) -> FrameContour:
    return FrameContour(
        shape.family,
        dict(shape.params),
        plane=plane,
        offset_2d=shape.offset_2d,
        rotation_rad=shape.rotation_rad,
        mirrored=shape.mirrored,
    )


def make_scene(
    shape: FrameContour,
    bridge_mm: float = 18.0,
    rim_width_mm: float = 4.0,
    wrap_deg: float = 0.0,
    pitch_deg: float = 0.0,
    shift_mm=(0.0, 0.0, 0.0),
    appearance: Appearance | None = None,
    rng_seed: int = 0,
) -> Scene:
    """Place ``shape`` as the right aperture and its mirror image as the left.

    The right eye sits at world +x, with its nasal extreme ``bridge_mm / 2``
    from the midline; ``wrap_deg`` turns each lens temporally away from the
    cameras and ``shift_mm`` moves the whole frame.
    """
    shape = _centered(shape)
    pts = shape.dense_points()
    half_width = 0.5 * (pts[:, 0].max() - pts[:, 0].min())
    shift = np.asarray(shift_mm, dtype=np.float64)
    origin = np.array([bridge_mm / 2.0 + half_width, 0.0, 0.0])
    right = _placed(shape, tilted_plane(origin, wrap_deg, pitch_deg))
    left = right.mirrored_x()
    if np.any(shift != 0.0):
        right = _placed(right, FramePlane.from_normal(right.plane.origin + shift, right.plane.normal))
        left = _placed(left, FramePlane.from_normal(left.plane.origin + shift, left.plane.normal))
    app = appearance or Appearance(rim_width_mm=rim_width_mm)
    meta = {"bridge_mm": bridge_mm, "wrap_deg": wrap_deg, "pitch_deg": pitch_deg, "family": shape.family}
    return Scene(right, left, app, rng_seed, meta)


def sample_scene(rng_seed, cfg: SceneConfig = SceneConfig()) -> Scene:
    rng = np.random.default_rng(rng_seed)
    shape = sample_contour(int(rng.integers(2**63)), cfg.contour)
    bridge = rng.uniform(*cfg.bridge_mm)
    rim_hi = min(cfg.rim_width_mm[1], bridge / 2.0 - cfg.nasal_clearance_mm)
    rim = rng.uniform(cfg.rim_width_mm[0], max(rim_hi, cfg.rim_width_mm[0]))
    shade = rng.uniform(0.05, 0.35)
    appearance = Appearance(
        rim_width_mm=rim,
        rim_color=tuple(np.clip(shade + rng.normal(0.0, 0.05, 3), 0.0, 1.0)),
        skin_color=tuple(np.clip(np.array([0.85, 0.66, 0.56]) * rng.uniform(0.6, 1.1) + rng.normal(0, 0.03, 3), 0, 1)),
        nose_clutter=bool(rng.random() < cfg.nose_clutter_prob),
        texture_seed=int(rng.integers(2**31)),
    )
    shift = (
        rng.uniform(-cfg.lateral_jitter_mm, cfg.lateral_jitter_mm),
        rng.uniform(-cfg.vertical_jitter_mm, cfg.vertical_jitter_mm),
        rng.uniform(-cfg.depth_jitter_mm, cfg.depth_jitter_mm),
    )
    return make_scene(
        shape,
        bridge,
        rim,
        rng.uniform(*cfg.wrap_deg),
        rng.uniform(*cfg.pitch_deg),
        shift,
        appearance,
        int(rng_seed) if np.isscalar(rng_seed) else 0,
    )


def eye_crop_origins(scene: Scene, rig: CameraRig, render_cfg: RenderConfig = RenderConfig()):
    """Per-view crop origins for (left, right).

    Each crop is centered on its eye but never crosses the projected midline
    between the two nasal rim extremes, so the crops cannot intersect.
    """
    s = render_cfg.crop_size
    w = scene.appearance.rim_width_mm
    out_l, out_r = [], []
    for cam in rig.cameras:
        lo_l, hi_l = projected_rim_bounds(scene.left, w, cam)
        lo_r, hi_r = projected_rim_bounds(scene.right, w, cam)
        if hi_l[0] >= lo_r[0]:
            raise OverlapError("the two eyes overlap in a view")
        mid = 0.5 * (hi_l[0] + lo_r[0])
        try:
            cl = project(cam, scene.left.plane.to_world(scene.left.center_2d))
            cr = project(cam, scene.right.plane.to_world(scene.right.center_2d))
        except NonPositiveDepth:
            raise OutOfFrustum("frame center is behind a camera") from None
        xl = min(int(np.floor(cl[0] - s / 2.0 + 0.5)), int(np.floor(mid)) - s)
        xr = max(int(np.floor(cr[0] - s / 2.0 + 0.5)), int(np.ceil(mid)))
        out_l.append((xl, int(np.floor(cl[1] - s / 2.0 + 0.5))))
        out_r.append((xr, int(np.floor(cr[1] - s / 2.0 + 0.5))))
    return np.array(out_l), np.array(out_r)


def crops_overlap(a, b, size: int) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(np.abs(a - b) < size))


def split_eyes(
    scene: Scene,
    rig: CameraRig,
    render_cfg: RenderConfig = RenderConfig(),
    sample_id: str = "scene",
    crop_origins=None,
):
    """Render a two-eye scene as two per-eye samples ``(left, right)``.

    ``crop_origins`` optionally gives ``(left, right)`` per-view origins;
    intersecting crops raise ``OverlapError``, crops that cut the rim margin
    raise ``OutOfFrustum``.
    """
    if crop_origins is None:
        origins_l, origins_r = eye_crop_origins(scene, rig, render_cfg)
    else:
        origins_l, origins_r = (np.asarray(o, dtype=np.int64) for o in crop_origins)
    for ol, orr in zip(origins_l, origins_r):
        if crops_overlap(ol, orr, render_cfg.crop_size):
            raise OverlapError("left and right crops intersect")
    w = scene.appearance.rim_width_mm
    for cam, ol, orr in zip(rig.cameras, origins_l, origins_r):
        check_crop(scene.left, w, cam, ol, render_cfg)
        check_crop(scene.right, w, cam, orr, render_cfg)
    seed = scene.rng_seed
    left = render_views(scene.left, rig, render_cfg, "left", scene.appearance, seed, f"{sample_id}_L", origins_l)
    right = render_views(scene.right, rig, render_cfg, "right", scene.appearance, seed, f"{sample_id}_R", origins_r)
    for smp in (left, right):
        smp.meta.update(scene.meta)
        smp.meta["rim_width_mm"] = w
    return left, right


def generate_scene_samples(
    seed: int,
    index: int,
    rig: CameraRig,
    scene_cfg: SceneConfig = SceneConfig(),
    render_cfg: RenderConfig = RenderConfig(),
    sample_id: str | None = None,
):
    """Scene ``index`` of the dataset keyed by ``seed``, as ``(left, right)``.

    A pure function of its arguments. Scenes that do not fit the rig are
    redrawn from the next sub-seed, at most 100 times.
    """
    sid = sample_id or f"s{index:05d}"
    for attempt in range(MAX_ATTEMPTS):
        scene = sample_scene([seed, index, attempt], scene_cfg)
        scene = Scene(scene.right, scene.left, scene.appearance, _sub_seed(seed, index, attempt), scene.meta)
        try:
            return split_eyes(scene, rig, render_cfg, sid)
        except (OutOfFrustum, OverlapError):
            continue
    raise GenerationFailed(f"scene {index} did not fit the rig after {MAX_ATTEMPTS} attempts")


def _sub_seed(seed: int, index: int, attempt: int) -> int:
    return int(np.random.default_rng([seed, index, attempt]).integers(2**63))
