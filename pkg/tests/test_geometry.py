import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trace_forge.errors import DegenerateGeometry, NonPositiveDepth, NotStarShaped, ParseError
from trace_forge.geometry import (
    CameraRig,
    backproject_ray,
    default_rig,
    fit_frame_plane,
    format_rig,
    frontal_plane,
    geometric_trace,
    look_at_camera,
    mask_edges,
    parse_rig,
    project,
    ray_cast_radius,
    read_rig,
    tilted_plane,
    triangulate_rays,
    write_rig,
)
from trace_forge.synthgen.contour import FrameContour
from trace_forge.synthgen.render import Appearance, RenderConfig, render_views

from oracles import polygon_ray_radii, project_oracle, superellipse_polygon

# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def test_circle_radius_exact():
    c = FrameContour.circle(21.7, offset_2d=(3.0, -1.5))
    th = np.linspace(0, 2 * np.pi, 600, endpoint=False)
    assert np.max(np.abs(ray_cast_radius(c, th) - 21.7)) < 1e-9


def test_ellipse_semi_axes_exact():
    c = FrameContour.ellipse(27.0, 15.0, offset_2d=(-2.0, 4.0))
    r = ray_cast_radius(c, np.array([0.0, np.pi / 2, np.pi, 3 * np.pi / 2]))
    assert np.max(np.abs(r - [27.0, 15.0, 27.0, 15.0])) < 1e-9


def test_scalar_angle_returns_float():
    c = FrameContour.circle(20.0)
    assert isinstance(ray_cast_radius(c, 0.3), float)


@pytest.mark.parametrize("a,b,n,rot", [(25.0, 18.0, 4.0, 0.1), (22.0, 21.0, 2.5, -0.13), (30.0, 13.0, 5.0, 0.0)])
def test_superellipse_matches_polygon_oracle(a, b, n, rot):
    off = np.array([1.25, -0.75])
    c = FrameContour.superellipse(a, b, n, offset_2d=off, rotation_rad=rot)
    poly = superellipse_polygon(a, b, n, rot, off)
    box = 0.5 * (poly.min(axis=0) + poly.max(axis=0))
    assert np.max(np.abs(c.center_2d - box)) < 1e-6
    th = np.linspace(0, 2 * np.pi, 600, endpoint=False)
    got = ray_cast_radius(c, th, center=box)
    want = polygon_ray_radii(poly, box, th)
    assert np.max(np.abs(got - want)) < 1e-6


class _TwoDisks:
    """Union of two disjoint disks: rays from one center can cross three times."""

    offset_2d = np.zeros(2)
    center_2d = np.zeros(2)
    bounding_radius = 40.0

    def residual(self, uv):
        uv = np.asarray(uv)
        d1 = np.hypot(uv[..., 0], uv[..., 1]) - 10.0
        d2 = np.hypot(uv[..., 0] - 30.0, uv[..., 1]) - 10.0
        return np.minimum(d1, d2)


def test_not_star_shaped():
    with pytest.raises(NotStarShaped):
        ray_cast_radius(_TwoDisks(), 0.0)
    with pytest.raises(NotStarShaped, match="outside"):
        ray_cast_radius(FrameContour.circle(20.0), 0.0, center=(50.0, 0.0))


@given(st.floats(12.0, 32.0), st.floats(0.0, 2 * np.pi))
def test_circle_radius_property(r, theta):
    assert abs(ray_cast_radius(FrameContour.circle(r), theta) - r) < 1e-9


# ---------------------------------------------------------------------------
# Cameras and projection
# ---------------------------------------------------------------------------


def test_projection_matches_matrix_oracle(rig, rng):
    p = rng.uniform([-60, -60, -100], [60, 60, 100], (1000, 3))
    for cam in rig:
        assert np.max(np.abs(project(cam, p) - project_oracle(cam, p))) < 1e-9
        P = cam.projection_matrix
        h = np.column_stack([p, np.ones(len(p))]) @ P.T
        assert np.max(np.abs(h[:, :2] / h[:, 2:] - project_oracle(cam, p))) < 1e-9


def test_project_backproject_round_trip(rig, rng):
    p = rng.uniform([-60, -60, -100], [60, 60, 100], (1000, 3))
    for cam in rig:
        px = project(cam, p)
        o, d = backproject_ray(cam, px)
        t = np.linalg.norm(p - o, axis=1)
        assert np.max(np.abs(project(cam, o + t[:, None] * d) - px)) < 1e-6
        # the original point lies on its ray
        perp = (p - o) - np.sum((p - o) * d, axis=1, keepdims=True) * d
        assert np.max(np.linalg.norm(perp, axis=1)) < 1e-9


def test_cameras_aim_at_target(rig):
    for cam in rig:
        assert np.allclose(project(cam, np.zeros((1, 3)))[0], cam.principal_point, atol=1e-9)
        assert abs(np.linalg.norm(cam.center) - 500.0) < 1e-9
    # camera image y points down the world y axis: a point lower in the world
    # appears lower in the image
    cam = rig[0]
    assert project(cam, np.array([[0.0, 10.0, 0.0]]))[0, 1] > cam.principal_point[1]


def test_default_scale_and_layout(rig):
    assert abs(rig.working_distance_mm / rig[0].focal_length_px - 0.357) < 1e-3
    xs = [cam.center[0] for cam in rig]
    ys = [cam.center[1] for cam in rig]
    assert xs[0] < 0 < xs[1] and ys[0] < 0 < ys[2]


def test_behind_camera_raises(rig):
    with pytest.raises(NonPositiveDepth):
        project(rig[0], rig[0].center[None, :] - 10 * rig[0].optical_axis)


def test_rig_validation(rig):
    with pytest.raises(ValueError):
        CameraRig(rig.cameras[:3])
    with pytest.raises(ValueError):
        CameraRig((rig[0], rig[0], rig[1], rig[2]))
    with pytest.raises(ValueError):
        default_rig(working_distance_mm=1000)
    with pytest.raises(DegenerateGeometry):
        look_at_camera((0, -500, 0), (0, 0, 0))


def test_rig_text_round_trip(rig, tmp_path):
    assert parse_rig(format_rig(rig)) == rig
    odd = default_rig(working_distance_mm=420.0, focal_length_px=1800.0)
    write_rig(odd, tmp_path / "rig.txt")
    assert read_rig(tmp_path / "rig.txt") == odd
    assert parse_rig("preset = default\n") == rig


def test_rig_parse_errors():
    with pytest.raises(ParseError) as info:
        parse_rig("preset = default\nworking_distance_mm = abc\n")
    assert info.value.line == 2
    with pytest.raises(ParseError):
        parse_rig("nonsense line\n")
    with pytest.raises(ParseError):
        parse_rig("preset = default\ncamera.7.focal_length_px = 1000\n")


def test_plane_round_trip(rng):
    pl = tilted_plane((3.0, -2.0, 12.0), 5.0, -3.0)
    uv = rng.uniform(-30, 30, (50, 2))
    assert np.allclose(pl.to_plane(pl.to_world(uv)), uv, atol=1e-12)
    m = pl.mirrored_x()
    assert np.allclose(m.normal * [-1, 1, 1], pl.normal, atol=1e-12)
    assert abs(np.linalg.norm(pl.normal) - 1.0) < 1e-12


def test_frontal_plane_axes():
    pl = frontal_plane()
    # in-plane y is image-up (world -y), so in-plane angles run counterclockwise
    # as seen from the cameras
    assert np.allclose(pl.to_world([[0.0, 1.0]])[0], [0.0, -1.0, 0.0])
    assert np.allclose(pl.to_world([[1.0, 0.0]])[0], [1.0, 0.0, 0.0])


def test_triangulate_rays_exact(rng):
    p = np.array([3.0, -4.0, 7.0])
    o = rng.normal(0, 100, (4, 3))
    d = p - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    assert np.allclose(triangulate_rays(o, d), p, atol=1e-9)
    with pytest.raises(DegenerateGeometry):
        triangulate_rays(o[:2], np.tile([0.0, 0.0, 1.0], (2, 1)))


# ---------------------------------------------------------------------------
# Classical tracer
# ---------------------------------------------------------------------------


def test_mask_edges_ring():
    yy, xx = np.mgrid[0:80, 0:80]
    r = np.hypot(xx - 40.0, yy - 40.0)
    ring = (r >= 20) & (r < 26)
    inner, outer = mask_edges(ring)
    ri = np.hypot(inner[:, 0] - 40, inner[:, 1] - 40)
    ro = np.hypot(outer[:, 0] - 40, outer[:, 1] - 40)
    assert np.all(ri < 21.0) and np.all(ro > 24.5)
    e = mask_edges(np.zeros((5, 5), bool))
    assert e[0].shape == (0, 2)


# one frontal circle per case: (radius, x, y, z) drawn once and pinned
CIRCLES = [(19.4, 1.2, -0.8, 4.0), (15.1, -2.5, 2.1, -7.5), (23.3, 0.4, 2.9, 9.0), (17.8, -1.1, -2.7, -2.0)]


@pytest.fixture(scope="module")
def fine_rig():
    # 500 mm / 2000 px = 0.25 mm per pixel
    return default_rig(focal_length_px=2000.0)


@pytest.mark.parametrize("r,x,y,z", CIRCLES)
def test_geometric_trace_circle(fine_rig, r, x, y, z):
    c = FrameContour.circle(r, plane=frontal_plane((x, y, z)))
    s = render_views(c, fine_rig, RenderConfig(), appearance=Appearance(rim_width_mm=4.0))
    tr = geometric_trace(s.masks, fine_rig, offsets=s.offsets)
    assert np.max(np.abs(tr.radii_mm - s.truth.radii_mm)) < 0.05
    assert not tr.flags.any()


def test_plane_fit_recovers_tilt(rig):
    c = FrameContour.superellipse(25.0, 18.0, 4.0, plane=tilted_plane((3.0, 2.0, 10.0), 4.0, -3.0))
    s = render_views(c, rig, appearance=Appearance(rim_width_mm=4.0))
    pl = fit_frame_plane(s.masks, rig, offsets=s.offsets)
    assert math.degrees(math.acos(min(1.0, abs(pl.normal @ c.plane.normal)))) < 0.5
    tr = geometric_trace(s.masks, rig, offsets=s.offsets)
    assert np.mean(np.abs(tr.radii_mm - s.truth.radii_mm)) < 0.1


def test_tracer_ignores_view_order(rig, eye_pair):
    s = eye_pair[1]
    base = geometric_trace(s.masks, rig, offsets=s.offsets, eye=s.eye)
    order = [2, 0, 3, 1]
    perm = geometric_trace([s.masks[i] for i in order], rig.permuted(order), offsets=s.offsets[order], eye=s.eye)
    assert np.array_equal(base.radii_mm, perm.radii_mm)


def test_tracer_on_generated_sample(rig, eye_pair):
    for s in eye_pair:
        tr = geometric_trace(s.masks, rig, offsets=s.offsets, eye=s.eye)
        assert tr.eye == s.eye
        assert np.mean(np.abs(tr.radii_mm - s.truth.radii_mm)) < 0.1


def test_tracer_degenerate_inputs(rig):
    empty = [np.zeros((64, 64), bool)] * 4
    with pytest.raises(DegenerateGeometry):
        geometric_trace(empty, rig)
    with pytest.raises(ValueError):
        geometric_trace(empty, rig, center_mode="middle")
