"""Classical (non-learned) multi-view trace estimator.

Masks are rim annuli. Their inner boundary, back-projected onto the frame
plane, is the inner edge of the frame. The plane itself is recovered by
requiring that all four back-projected silhouettes agree.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from ..errors import DegenerateGeometry
from ..trace import FLAG_OCCLUDED, N_POINTS, RadialTrace, trace_angles
from .camera import CameraRig, FramePlane, backproject_ray

logger = logging.getLogger(__name__)

WINDOW_PX = 11.0
MIN_SIDE_POINTS = 2
PAIR_WEIGHT_FLOOR = 0.05
NORMAL_SIGMA_PX = 1.5
LOCAL_DEGREE = 1
_PLANE_GRID = 180
_CENTER_ITERATIONS = 3


@dataclass
class _ViewEdges:
    origins: np.ndarray  # (N, 3)
    inner_dirs: np.ndarray
    outer_dirs: np.ndarray
    inner_w: np.ndarray
    outer_w: np.ndarray
    focal_px: float


def mask_centroid(mask) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    return np.array([xs.mean(), ys.mean()])


def _inner_pairs(m, c, pts, zi, g):
    """True for boundary pairs whose background pixel lies in the aperture.

    The aperture is the background component around ``c``. When the ring is
    open (that component reaches the crop border) fall back to the sign of
    the mask gradient along the outward direction.
    """
    labels, _ = ndimage.label(~m)
    ci = np.clip(np.rint(c).astype(np.int64), 0, np.array(m.shape[::-1]) - 1)
    hole = labels[ci[1], ci[0]]
    if hole:
        border = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
        if not np.any(border == hole):
            return labels[zi[:, 1], zi[:, 0]] == hole
    return np.sum(g * (pts - c), axis=1) > 0.0


def mask_edges(mask, center=None, with_weights: bool = False):
    """Sub-pixel inner and outer boundary points of a rim mask (local pixels).

    Each 4-neighbour pair straddling the mask boundary yields the midpoint of
    the two pixel centres. The pair belongs to the inner boundary when its
    background pixel is the one nearer to ``center`` (default: mask centroid).

    A midpoint is uncertain by half a pixel along its pair axis, so pairs
    running along the edge locate it far better than pairs crossing it.
    With ``with_weights`` each point also gets an inverse-variance weight
    from the angle between its pair axis and the radial direction.
    """
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        empty = np.empty((0, 2))
        return (empty, empty, np.empty(0), np.empty(0)) if with_weights else (empty, empty)
    c = mask_centroid(m) if center is None else np.asarray(center, dtype=np.float64)
    pts, zero_pts, one_pts = [], [], []
    # horizontal pairs: (i, j) - (i, j+1)
    hi, hj = np.nonzero(m[:, :-1] != m[:, 1:])
    left_is_zero = ~m[hi, hj]
    pts.append(np.stack([hj + 0.5, hi.astype(np.float64)], axis=1))
    zero_pts.append(np.stack([np.where(left_is_zero, hj, hj + 1), hi], axis=1))
    one_pts.append(np.stack([np.where(left_is_zero, hj + 1, hj), hi], axis=1))
    vi, vj = np.nonzero(m[:-1, :] != m[1:, :])
    top_is_zero = ~m[vi, vj]
    pts.append(np.stack([vj.astype(np.float64), vi + 0.5], axis=1))
    zero_pts.append(np.stack([vj, np.where(top_is_zero, vi, vi + 1)], axis=1))
    one_pts.append(np.stack([vj, np.where(top_is_zero, vi + 1, vi)], axis=1))
    pts = np.concatenate(pts)
    z = np.concatenate(zero_pts).astype(np.float64)
    o = np.concatenate(one_pts).astype(np.float64)
    zi = z.astype(np.int64)
    oi = o.astype(np.int64)
    # edge normal from the gradient of the blurred mask, averaged over the pair
    smooth = ndimage.gaussian_filter(m.astype(np.float64), NORMAL_SIGMA_PX)
    gy, gx = np.gradient(smooth)
    g = np.stack(
        [gx[zi[:, 1], zi[:, 0]] + gx[oi[:, 1], oi[:, 0]], gy[zi[:, 1], zi[:, 0]] + gy[oi[:, 1], oi[:, 0]]],
        axis=1,
    )
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    inner = _inner_pairs(m, c, pts, zi, g)
    if not with_weights:
        return pts[inner], pts[~inner]
    n_h = hi.size
    cos_axis = np.concatenate([np.abs(g[:n_h, 0]), np.abs(g[n_h:, 1])])
    w = 1.0 / (cos_axis**2 + PAIR_WEIGHT_FLOOR)
    return pts[inner], pts[~inner], w[inner], w[~inner]


def polar_profile(phi, rho, grid, halfwidth, min_side: int = MIN_SIDE_POINTS, weights=None, degree: int = None):
    """Local-polynomial (tricube-weighted) estimate of rho(grid) from samples.

    Returns (values, visible); an angle is visible when at least ``min_side``
    samples fall inside the window on each side of it.
    """
    grid = np.asarray(grid, dtype=np.float64)
    degree = LOCAL_DEGREE if degree is None else degree
    if phi.size == 0:
        return np.zeros(grid.shape), np.zeros(grid.shape, dtype=bool)
    order = np.argsort(phi, kind="stable")
    p = phi[order]
    r = rho[order]
    pw = np.ones_like(p) if weights is None else np.asarray(weights, dtype=np.float64)[order]
    pe = np.concatenate([p - 2.0 * np.pi, p, p + 2.0 * np.pi])
    re = np.concatenate([r, r, r])
    we = np.concatenate([pw, pw, pw])
    lo = np.searchsorted(pe, grid - halfwidth, side="right")
    hi = np.searchsorted(pe, grid + halfwidth, side="left")
    k = max(int(np.max(hi - lo)), 1)
    idx = lo[:, None] + np.arange(k)
    inside = idx < hi[:, None]
    idx = np.minimum(idx, pe.size - 1)
    d = pe[idx] - grid[:, None]
    rw = re[idx]
    w = np.where(inside, we[idx] * (1.0 - (np.abs(d) / halfwidth) ** 3) ** 3, 0.0)
    # scaled offsets keep the normal equations well conditioned
    x = d / halfwidth
    powers = [w]
    for _ in range(2 * degree):
        powers.append(powers[-1] * x)
    moments = np.stack([pw_.sum(axis=1) for pw_ in powers], axis=1)
    rhs = np.stack([(powers[k] * rw).sum(axis=1) for k in range(degree + 1)], axis=1)
    A = np.stack([moments[:, k : k + degree + 1] for k in range(degree + 1)], axis=1)
    left = np.count_nonzero(inside & (d < 0), axis=1)
    right = np.count_nonzero(inside & (d > 0), axis=1)
    det = np.linalg.det(A)
    visible = (left >= min_side) & (right >= min_side) & (np.abs(det) > 1e-300)
    val = np.zeros(grid.shape)
    if visible.any():
        val[visible] = np.linalg.solve(A[visible], rhs[visible][..., None])[:, 0, 0]
    return val, visible


def _canonical_order(rig: CameraRig) -> list[int]:
    def key(i):
        cam = rig[i]
        return tuple(cam.center) + tuple(cam.rotation.reshape(-1)) + (cam.focal_length_px,)

    return sorted(range(4), key=key)


def _prepare(masks, rig: CameraRig, offsets):
    if len(masks) != 4:
        raise DegenerateGeometry(f"need 4 masks, got {len(masks)}")
    if offsets is None:
        offsets = np.zeros((4, 2))
    offsets = np.asarray(offsets, dtype=np.float64).reshape(4, 2)
    order = _canonical_order(rig)
    views, centroid_rays = [], []
    for i in order:
        m = np.asarray(masks[i], dtype=bool)
        if not m.any():
            raise DegenerateGeometry(f"mask of view {i} is empty")
        cam = rig[i]
        c_local = mask_centroid(m)
        inner, outer, w_in, w_out = mask_edges(m, c_local, with_weights=True)
        if len(inner) < 8:
            raise DegenerateGeometry(f"view {i}: no usable inner edge in mask")
        o, d_c = backproject_ray(cam, c_local + offsets[i])
        centroid_rays.append((o, d_c))
        _, d_in = backproject_ray(cam, inner + offsets[i])
        _, d_out = backproject_ray(cam, outer + offsets[i]) if len(outer) else (None, np.empty((0, 3)))
        views.append(_ViewEdges(cam.center, d_in, d_out, w_in, w_out, cam.focal_length_px))
    return views, centroid_rays


def triangulate_rays(origins, directions) -> np.ndarray:
    """Point minimizing the summed squared distance to a set of rays."""
    A = np.zeros((3, 3))
    b = np.zeros(3)
    for o, d in zip(origins, directions):
        P = np.eye(3) - np.outer(d, d)
        A += P
        b += P @ o
    if np.linalg.cond(A) > 1e10:
        raise DegenerateGeometry("rays are (nearly) parallel; cannot triangulate")
    return np.linalg.solve(A, b)


def _plane_polar(view: _ViewEdges, dirs: np.ndarray, plane: FramePlane, center, weights):
    pts, t = plane.intersect(view.origins, dirs)
    front = t > 0
    uv = plane.to_plane(pts[front]) - center
    return np.arctan2(uv[:, 1], uv[:, 0]), np.hypot(uv[:, 0], uv[:, 1]), weights[front]


def _halfwidth(views, plane: FramePlane, rho_typ: float) -> float:
    dist = np.mean([abs((v.origins - plane.origin) @ plane.normal) for v in views])
    mm_per_px = dist / np.mean([v.focal_px for v in views])
    return float(np.clip(WINDOW_PX * mm_per_px / max(rho_typ, 1e-6), np.radians(0.5), np.radians(20.0)))


def _consistency(views, plane: FramePlane, grid, halfwidth, center=(0.0, 0.0)):
    res = []
    for which in ("inner", "outer"):
        vals, vis = [], []
        for v in views:
            dirs = getattr(v, which + "_dirs")
            phi, rho, w = _plane_polar(v, dirs, plane, np.asarray(center), getattr(v, which + "_w"))
            val, ok = polar_profile(phi, rho, grid, halfwidth, weights=w)
            vals.append(val)
            vis.append(ok)
        vals = np.array(vals)
        vis = np.array(vis)
        count = vis.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(count > 0, (vals * vis).sum(axis=0) / np.maximum(count, 1), 0.0)
        use = vis & (count >= 2)[None, :]
        res.append(np.where(use, vals - mean, 0.0).reshape(-1))
    return np.concatenate(res)


def fit_frame_plane(masks, rig: CameraRig, offsets=None) -> FramePlane:
    """Recover the frame plane from four rim masks.

    The mask centroids are triangulated to seed a plane facing the rig; depth
    and tilt are then refined so that the back-projected inner and outer rim
    edges of all views coincide in the plane (least squares on the per-angle
    radial disagreement). The returned plane carries the RMS of that
    disagreement (mm) in ``residual_rms``.
    """
    views, centroid_rays = _prepare(masks, rig, offsets)
    return _fit_plane(views, centroid_rays, rig)


def _fit_plane(views, centroid_rays, rig: CameraRig) -> FramePlane:
    p0 = triangulate_rays([o for o, _ in centroid_rays], [d for _, d in centroid_rays])
    cam_mean = np.mean([c.center for c in rig.cameras], axis=0)
    n0 = cam_mean - p0
    n0 /= np.linalg.norm(n0)
    e1 = np.cross(n0, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n0, e1)

    def plane_of(q):
        n = n0 + q[1] * e1 + q[2] * e2
        return FramePlane.from_normal(p0 + q[0] * n0, n / np.linalg.norm(n))

    plane = plane_of(np.zeros(3))
    phi, rho, _ = _plane_polar(views[0], views[0].inner_dirs, plane, np.zeros(2), views[0].inner_w)
    if rho.size < 8:
        raise DegenerateGeometry("inner edge does not intersect the seed plane")
    halfwidth = _halfwidth(views, plane, float(np.median(rho)))
    grid = 2.0 * np.pi * np.arange(_PLANE_GRID) / _PLANE_GRID

    def fun(q):
        return _consistency(views, plane_of(q), grid, halfwidth)

    sol = least_squares(fun, np.zeros(3), x_scale=np.array([1.0, 0.01, 0.01]), method="trf")
    plane = plane_of(sol.x)
    res = fun(sol.x)
    nz = res[res != 0.0]
    rms = float(np.sqrt(np.mean(nz**2))) if nz.size else 0.0
    # collinearity check on the recovered inner edge
    pts = np.concatenate(
        [plane.to_plane(plane.intersect(v.origins, v.inner_dirs)[0]) for v in views]
    )
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if sv[-1] < 1e-6 * max(sv[0], 1e-12):
        raise DegenerateGeometry("inner edge points are collinear")
    logger.debug("plane fit: depth %+.4f mm, tilt (%.2e, %.2e), rms %.4f mm", *sol.x, rms)
    return FramePlane(plane.origin, plane.normal, plane.in_plane_x, rms)


def _fill_circular(values, good):
    n = values.size
    if good.all():
        return values
    idx = np.arange(n)
    return np.interp(idx, idx[good], values[good], period=n)


def _bbox_center(points) -> np.ndarray:
    return 0.5 * (points.max(axis=0) + points.min(axis=0))


def _polygon_centroid(points) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * area)


def geometric_trace(
    masks,
    rig: CameraRig,
    n_points: int = N_POINTS,
    offsets=None,
    eye: str = "right",
    center_mode: str = "boxing",
) -> RadialTrace:
    """Trace the inner edge from four rim masks without any learning.

    ``offsets`` gives each mask's top-left pixel inside the full camera image
    (per-eye crops). Angles seen by fewer than two views are flagged
    ``FLAG_OCCLUDED`` and filled by circular interpolation. The result is
    sampled at ``n_points`` angles and resampled to 600 when they differ.
    """
    if center_mode not in ("boxing", "centroid"):
        raise ValueError(f"unknown center mode {center_mode!r}")
    views, centroid_rays = _prepare(masks, rig, offsets)
    plane = _fit_plane(views, centroid_rays, rig)
    per_view = [
        plane.to_plane(plane.intersect(v.origins, v.inner_dirs)[0]) for v in views
    ]
    pooled = np.concatenate(per_view)
    center = pooled.mean(axis=0)
    grid = trace_angles(0.0, n_points)
    rho_typ = float(np.median(np.hypot(*(pooled - center).T)))
    halfwidth = _halfwidth(views, plane, rho_typ)

    for it in range(_CENTER_ITERATIONS + 1):
        vals, vis = [], []
        for uv, v in zip(per_view, views):
            d = uv - center
            val, ok = polar_profile(
                np.arctan2(d[:, 1], d[:, 0]), np.hypot(d[:, 0], d[:, 1]), grid, halfwidth, weights=v.inner_w
            )
            vals.append(val)
            vis.append(ok)
        vals = np.array(vals)
        vis = np.array(vis)
        count = vis.sum(axis=0)
        good = count >= 2
        if not good.any():
            exc = DegenerateGeometry("no angle is seen by two or more views")
            exc.views_per_angle = count
            raise exc
        radii = np.where(good, (vals * vis).sum(axis=0) / np.maximum(count, 1), 0.0)
        radii = _fill_circular(radii, good)
        if it == _CENTER_ITERATIONS:
            break
        pts = center + radii[:, None] * np.stack([np.cos(grid), np.sin(grid)], axis=1)
        center = _bbox_center(pts) if center_mode == "boxing" else _polygon_centroid(pts)

    flags = np.where(good, 0, FLAG_OCCLUDED).astype(np.uint8)
    if n_points != N_POINTS:
        target = trace_angles(0.0, N_POINTS)
        radii = np.interp(target, grid, radii, period=2.0 * np.pi)
        flags = flags[np.round(target / (2.0 * np.pi) * n_points).astype(int) % n_points]
        count = count[np.round(target / (2.0 * np.pi) * n_points).astype(int) % n_points]
    return RadialTrace(
        radii,
        angle0_rad=0.0,
        center_2d=tuple(center),
        eye=eye,
        flags=flags,
        meta={"plane": plane, "views_per_angle": count, "center_mode": center_mode},
    )
