"""Polar ray casting against closed planar contours.

Works with any contour object exposing ``residual(uv)`` (negative inside,
positive outside), ``center_2d`` and ``bounding_radius``.
"""

from __future__ import annotations

import numpy as np

from ..errors import NotStarShaped

_BRACKET_SAMPLES = 512


def _ray_residuals(contour, center, theta, radii):
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    pts = center + radii[..., None] * u[..., None, :]
    return contour.residual(pts)


def count_crossings(contour, angles_rad, center=None, n_samples: int = _BRACKET_SAMPLES):
    """Number of inside/outside transitions along each ray (sampled)."""
    center = np.asarray(contour.center_2d if center is None else center, dtype=np.float64)
    theta = np.atleast_1d(np.asarray(angles_rad, dtype=np.float64))
    r_max = 1.5 * (contour.bounding_radius + np.linalg.norm(center - contour.offset_2d)) + 1.0
    r = np.linspace(0.0, r_max, n_samples)
    g = _ray_residuals(contour, center, theta, np.broadcast_to(r, theta.shape + r.shape))
    outside = g > 0
    return np.count_nonzero(outside[:, 1:] != outside[:, :-1], axis=1), outside, r


def ray_cast_radius(contour, angle_rad, center=None):
    """Distance from ``center`` (default: the boxing center) to the curve.

    Brackets the single sign change of the polar residual on a sampled grid,
    then bisects until the bracket collapses to adjacent floats.
    """
    scalar = np.ndim(angle_rad) == 0
    theta = np.atleast_1d(np.asarray(angle_rad, dtype=np.float64))
    center = np.asarray(contour.center_2d if center is None else center, dtype=np.float64)
    crossings, outside, r = count_crossings(contour, theta, center)
    if np.any(outside[:, 0]):
        raise NotStarShaped("ray origin lies outside the contour")
    if np.any(crossings != 1):
        bad = int(np.flatnonzero(crossings != 1)[0])
        raise NotStarShaped(
            f"ray at {theta[bad]:.6f} rad crosses the contour {int(crossings[bad])} times"
        )
    first_out = np.argmax(outside, axis=1)
    lo = r[first_out - 1].copy()
    hi = r[first_out].copy()
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        active = (mid > lo) & (mid < hi)
        if not active.any():
            break
        inside = contour.residual(center + mid[:, None] * u) <= 0
        lo = np.where(active & inside, mid, lo)
        hi = np.where(active & ~inside, mid, hi)
    out = 0.5 * (lo + hi)
    return float(out[0]) if scalar else out
