"""Parametric inner-edge contours of one eye aperture."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize_scalar

from ..errors import NotStarShaped
from ..geometry.camera import FramePlane, frontal_plane
from ..geometry.raycast import count_crossings

FAMILIES = ("circle", "ellipse", "superellipse", "fourier")
MAX_FOURIER_ORDER = 8
SEMI_AXIS_RANGE_MM = (12.0, 32.0)
_N_STAR_RAYS = 3600
_N_DENSE = 4096


@dataclass(frozen=True, eq=False)
class FrameContour:
    """Closed inner edge described as a polar function about ``offset_2d``.

    ``params`` holds ``a``/``b`` semi-axes (mm), ``exponent`` (2 for
    ellipses) and, for the fourier family, ``cos``/``sin`` coefficient arrays
    for orders 1..8 that modulate the radius multiplicatively.
    ``mirrored`` reflects the shape across the plane's y axis (left eye).
    """

    family: str
    params: dict
    plane: FramePlane = field(default_factory=frontal_plane)
    offset_2d: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rotation_rad: float = 0.0
    mirrored: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown contour family {self.family!r}")
        p = dict(self.params)
        if self.family == "circle":
            p.setdefault("b", p["a"])
            if p["b"] != p["a"]:
                raise ValueError("a circle needs a == b")
        p.setdefault("exponent", 2.0)
        if self.family in ("circle", "ellipse") and p["exponent"] != 2.0:
            raise ValueError(f"{self.family} exponent must be 2")
        if self.family == "fourier":
            c = np.zeros(MAX_FOURIER_ORDER)
            s = np.zeros(MAX_FOURIER_ORDER)
            cin = np.asarray(p.get("cos", ()), dtype=np.float64)
            sin_ = np.asarray(p.get("sin", ()), dtype=np.float64)
            if cin.size > MAX_FOURIER_ORDER or sin_.size > MAX_FOURIER_ORDER:
                raise ValueError("fourier order above 8")
            c[: cin.size] = cin
            s[: sin_.size] = sin_
            p["cos"], p["sin"] = c, s
            if np.sum(np.abs(c)) + np.sum(np.abs(s)) > 0.1 + 1e-12:
                raise ValueError("fourier perturbation amplitude exceeds 10% of the radius")
        for key in ("a", "b"):
            v = float(p[key])
            if not SEMI_AXIS_RANGE_MM[0] <= v <= SEMI_AXIS_RANGE_MM[1]:
                raise ValueError(f"semi-axis {key}={v} outside {SEMI_AXIS_RANGE_MM} mm")
            p[key] = v
        p["exponent"] = float(p["exponent"])
        if p["exponent"] < 1.5:
            raise ValueError("superellipse exponent must be >= 1.5")
        object.__setattr__(self, "params", p)
        off = np.array(self.offset_2d, dtype=np.float64).reshape(2)
        off.flags.writeable = False
        object.__setattr__(self, "offset_2d", off)
        object.__setattr__(self, "rotation_rad", float(self.rotation_rad))

    # -- constructors -----------------------------------------------------
    @classmethod
    def circle(cls, radius: float, **kw) -> "FrameContour":
        return cls("circle", {"a": radius}, **kw)

    @classmethod
    def ellipse(cls, a: float, b: float, **kw) -> "FrameContour":
        return cls("ellipse", {"a": a, "b": b}, **kw)

    @classmethod
    def superellipse(cls, a: float, b: float, exponent: float, **kw) -> "FrameContour":
        return cls("superellipse", {"a": a, "b": b, "exponent": exponent}, **kw)

    # -- shape ------------------------------------------------------------
    def polar_radius(self, phi) -> np.ndarray:
        """Radius of the curve about ``offset_2d`` at in-plane angle ``phi``."""
        phi = np.asarray(phi, dtype=np.float64)
        psi = (np.pi - phi if self.mirrored else phi) - self.rotation_rad
        p = self.params
        a, b = p["a"], p["b"]
        if self.family == "circle":
            rho = np.full_like(psi, a)
        else:
            n = p["exponent"]
            rho = (np.abs(np.cos(psi) / a) ** n + np.abs(np.sin(psi) / b) ** n) ** (-1.0 / n)
        if self.family == "fourier":
            k = np.arange(1, MAX_FOURIER_ORDER + 1)
            kp = psi[..., None] * k
            rho = rho * (1.0 + np.cos(kp) @ p["cos"] + np.sin(kp) @ p["sin"])
        return rho

    def residual(self, uv) -> np.ndarray:
        d = np.asarray(uv, dtype=np.float64) - self.offset_2d
        rho = np.hypot(d[..., 0], d[..., 1])
        return rho - self.polar_radius(np.arctan2(d[..., 1], d[..., 0]))

    def dense_points(self, n: int = _N_DENSE) -> np.ndarray:
        phi = 2.0 * np.pi * np.arange(n) / n
        rho = self.polar_radius(phi)
        return self.offset_2d + rho[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)

    @cached_property
    def bounding_radius(self) -> float:
        return float(np.max(self.polar_radius(2.0 * np.pi * np.arange(_N_DENSE) / _N_DENSE)))

    @cached_property
    def center_2d(self) -> np.ndarray:
        """Boxing center: middle of the axis-aligned bounding box (plane coords)."""
        n = _N_DENSE
        phi = 2.0 * np.pi * np.arange(n) / n
        step = 2.0 * np.pi / n
        extremes = []
        for axis in (0, 1):
            trig = np.cos if axis == 0 else np.sin
            coord = self.offset_2d[axis] + self.polar_radius(phi) * trig(phi)
            for sign in (1.0, -1.0):
                k = int(np.argmax(sign * coord))
                best = sign * coord[k]

                def f(t, trig=trig, axis=axis, sign=sign):
                    return -sign * (self.offset_2d[axis] + self.polar_radius(t) * trig(t))

                res = minimize_scalar(
                    f,
                    bounds=(phi[k] - step, phi[k] + step),
                    method="bounded",
                    options={"xatol": 1e-12},
                )
                best = max(best, -float(res.fun))
                extremes.append(sign * best)
        xmax, xmin, ymax, ymin = extremes
        c = np.array([(xmax + xmin) / 2.0, (ymax + ymin) / 2.0])
        c.flags.writeable = False
        return c

    def check_star_shaped(self, n_rays: int = _N_STAR_RAYS) -> None:
        theta = 2.0 * np.pi * np.arange(n_rays) / n_rays
        crossings, outside, _ = count_crossings(self, theta)
        if np.any(outside[:, 0]):
            raise NotStarShaped("boxing center lies outside the contour")
        if np.any(crossings != 1):
            raise NotStarShaped(f"{int(np.count_nonzero(crossings != 1))} rays cross more than once")

    def world_points(self, n: int = _N_DENSE) -> np.ndarray:
        return self.plane.to_world(self.dense_points(n))

    def mirrored_x(self) -> "FrameContour":
        """Mirror image across the world plane x = 0."""
        off = self.offset_2d * np.array([-1.0, 1.0])
        return FrameContour(
            self.family,
            dict(self.params),
            plane=self.plane.mirrored_x(),
            offset_2d=off,
            rotation_rad=self.rotation_rad,
            mirrored=not self.mirrored,
        )

    def rotated(self, angle_rad: float) -> "FrameContour":
        """Same contour rotated counterclockwise in its plane about ``offset_2d``."""
        sign = -1.0 if self.mirrored else 1.0
        return FrameContour(
            self.family,
            dict(self.params),
            plane=self.plane,
            offset_2d=self.offset_2d,
            rotation_rad=self.rotation_rad + sign * angle_rad,
            mirrored=self.mirrored,
        )
