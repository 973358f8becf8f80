"""Pinhole cameras, the four-camera rig and frame planes.

World frame: x to the right, y down, z away from the cameras (millimetres).
Camera frame follows the usual computer-vision convention (x right, y down,
z forward). Pixel centres sit at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateGeometry, NonPositiveDepth

DEFAULT_IMAGE_SIZE = (1296, 1296)
DEFAULT_FOCAL_PX = 1400.0
DEFAULT_WORKING_DISTANCE_MM = 500.0
# (yaw, pitch) in degrees, camera index order
DEFAULT_VIEW_OFFSETS_DEG = ((-10.0, 6.0), (10.0, 6.0), (-10.0, -6.0), (10.0, -6.0))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PinholeCamera:
    focal_length_px: float
    principal_point: np.ndarray
    image_size: tuple[int, int]  # (width, height)
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray  # mm

    def __post_init__(self):
        object.__setattr__(self, "focal_length_px", float(self.focal_length_px))
        object.__setattr__(self, "principal_point", _frozen(self.principal_point).reshape(2))
        object.__setattr__(self, "image_size", (int(self.image_size[0]), int(self.image_size[1])))
        object.__setattr__(self, "rotation", _frozen(self.rotation).reshape(3, 3))
        object.__setattr__(self, "translation", _frozen(self.translation).reshape(3))
        R = self.rotation
        if not np.allclose(R.T @ R, np.eye(3), rtol=0.0, atol=1e-9):
            raise ValueError("camera rotation is not orthonormal")
        if np.linalg.det(R) <= 0:
            raise ValueError("camera rotation must have determinant +1")
        if not self.focal_length_px > 0:
            raise ValueError("focal length must be positive")
        w, h = self.image_size
        cx, cy = self.principal_point
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise ValueError("principal point outside the image")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def K(self) -> np.ndarray:
        f = self.focal_length_px
        cx, cy = self.principal_point
        return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])

    @property
    def projection_matrix(self) -> np.ndarray:
        return self.K @ np.hstack([self.rotation, self.translation[:, None]])

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[2].copy()

    def to_camera(self, points_world) -> np.ndarray:
        p = np.asarray(points_world, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def same_pose(self, other: "PinholeCamera") -> bool:
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __eq__(self, other):
        if not isinstance(other, PinholeCamera):
            return NotImplemented
        return (
            self.focal_length_px == other.focal_length_px
            and np.array_equal(self.principal_point, other.principal_point)
            and self.image_size == other.image_size
            and self.same_pose(other)
        )

    __hash__ = None


def look_at_camera(
    center,
    target,
    focal_length_px: float = DEFAULT_FOCAL_PX,
    image_size=DEFAULT_IMAGE_SIZE,
    principal_point=None,
) -> PinholeCamera:
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross([0.0, 1.0, 0.0], z)
    n = np.linalg.norm(x)
    if n < 1e-12:
        raise DegenerateGeometry("camera looks straight along the world y axis")
    x /= n
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    if principal_point is None:
        principal_point = (image_size[0] / 2.0, image_size[1] / 2.0)
    return PinholeCamera(focal_length_px, principal_point, image_size, R, -R @ center)


@dataclass(frozen=True, eq=False)
class CameraRig:
    cameras: tuple[PinholeCamera, ...]
    working_distance_mm: float = DEFAULT_WORKING_DISTANCE_MM

    def __post_init__(self):
        cams = tuple(self.cameras)
        object.__setattr__(self, "cameras", cams)
        object.__setattr__(self, "working_distance_mm", float(self.working_distance_mm))
        if len(cams) != 4:
            raise ValueError(f"a rig has exactly 4 cameras, got {len(cams)}")
        for i in range(4):
            for j in range(i + 1, 4):
                if cams[i].same_pose(cams[j]):
                    raise ValueError(f"cameras {i} and {j} share a pose")
        if not 300.0 <= self.working_distance_mm <= 800.0:
            raise ValueError("working distance must lie in [300, 800] mm")

    def __len__(self):
        return 4

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i) -> PinholeCamera:
        return self.cameras[i]

    def __eq__(self, other):
        if not isinstance(other, CameraRig):
            return NotImplemented
        return self.working_distance_mm == other.working_distance_mm and all(
            a == b for a, b in zip(self.cameras, other.cameras)
        )

    __hash__ = None

    def permuted(self, order) -> "CameraRig":
        return CameraRig(tuple(self.cameras[i] for i in order), self.working_distance_mm)


def default_rig(
    working_distance_mm: float = DEFAULT_WORKING_DISTANCE_MM,
    focal_length_px: float = DEFAULT_FOCAL_PX,
    image_size=DEFAULT_IMAGE_SIZE,
    view_offsets_deg=DEFAULT_VIEW_OFFSETS_DEG,
    target=(0.0, 0.0, 0.0),
) -> CameraRig:
    """Four cameras on an arc, all aimed at ``target`` from ``working_distance_mm``."""
    target = np.asarray(target, dtype=np.float64)
    cams = []
    for yaw_deg, pitch_deg in view_offsets_deg:
        yaw, pitch = np.radians(yaw_deg), np.radians(pitch_deg)
        toward_cam = np.array(
            [np.sin(yaw) * np.cos(pitch), -np.sin(pitch), -np.cos(yaw) * np.cos(pitch)]
        )
        cams.append(
            look_at_camera(
                target + working_distance_mm * toward_cam,
                target,
                focal_length_px=focal_length_px,
                image_size=image_size,
            )
        )
    return CameraRig(tuple(cams), working_distance_mm)


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def project(camera: PinholeCamera, point_world) -> np.ndarray:
    """Project world points (..., 3) to pixels (..., 2)."""
    pc = camera.to_camera(point_world)
    z = pc[..., 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepth("point at or behind the camera plane")
    f = camera.focal_length_px
    return camera.principal_point + f * pc[..., :2] / z[..., None]


def backproject_ray(camera: PinholeCamera, pixel) -> tuple[np.ndarray, np.ndarray]:
    """World-frame ray (origin, unit direction) through pixel(s) (..., 2)."""
    px = np.asarray(pixel, dtype=np.float64)
    d = np.empty(px.shape[:-1] + (3,))
    d[..., :2] = (px - camera.principal_point) / camera.focal_length_px
    d[..., 2] = 1.0
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    d_world = d @ camera.rotation
    origin = np.broadcast_to(camera.center, d_world.shape).copy()
    return origin, d_world


# ---------------------------------------------------------------------------
# Frame plane
# ---------------------------------------------------------------------------


def _world_x_in_plane(normal: np.ndarray) -> np.ndarray:
    x = np.array([1.0, 0.0, 0.0]) - normal[0] * normal
    n = np.linalg.norm(x)
    if n < 1e-9:
        raise DegenerateGeometry("frame plane normal is parallel to the world x axis")
    return x / n


@dataclass(frozen=True, eq=False)
class FramePlane:
    """Oriented plane carrying a frame contour.

    The normal points toward the cameras and ``in_plane_x`` is the world x
    axis projected into the plane, so (x, y, normal) is right-handed and
    angles measured in (x, y) run counterclockwise as seen by the cameras.
    """

    origin: np.ndarray
    normal: np.ndarray
    in_plane_x: np.ndarray
    residual_rms: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "origin", _frozen(self.origin).reshape(3))
        object.__setattr__(self, "normal", _frozen(self.normal).reshape(3))
        object.__setattr__(self, "in_plane_x", _frozen(self.in_plane_x).reshape(3))
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-12:
            raise ValueError("plane normal must be a unit vector")
        if abs(np.linalg.norm(self.in_plane_x) - 1.0) > 1e-12:
            raise ValueError("in_plane_x must be a unit vector")
        if abs(float(self.in_plane_x @ self.normal)) > 1e-12:
            raise ValueError("in_plane_x must be orthogonal to the normal")

    @classmethod
    def from_normal(cls, origin, normal, residual_rms: float = float("nan")) -> "FramePlane":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        x = _world_x_in_plane(n)
        # re-orthogonalize to machine precision
        x = x - (x @ n) * n
        x /= np.linalg.norm(x)
        return cls(np.asarray(origin, dtype=np.float64), n, x, residual_rms)

    @property
    def in_plane_y(self) -> np.ndarray:
        return np.cross(self.normal, self.in_plane_x)

    def to_world(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        return self.origin + uv[..., :1] * self.in_plane_x + uv[..., 1:2] * self.in_plane_y

    def to_plane(self, points) -> np.ndarray:
        d = np.asarray(points, dtype=np.float64) - self.origin
        return np.stack([d @ self.in_plane_x, d @ self.in_plane_y], axis=-1)

    def intersect(self, origins, directions) -> tuple[np.ndarray, np.ndarray]:
        """Ray/plane intersection; returns (points, ray parameter t)."""
        o = np.asarray(origins, dtype=np.float64)
        d = np.asarray(directions, dtype=np.float64)
        denom = d @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.origin - o) @ self.normal) / denom
        return o + t[..., None] * d, t

    def mirrored_x(self) -> "FramePlane":
        """Mirror image across the world plane x = 0."""
        m = np.array([-1.0, 1.0, 1.0])
        return FramePlane.from_normal(self.origin * m, self.normal * m)


def frontal_plane(origin=(0.0, 0.0, 0.0)) -> FramePlane:
    return FramePlane.from_normal(origin, (0.0, 0.0, -1.0))


def tilted_plane(origin, yaw_deg: float = 0.0, pitch_deg: float = 0.0) -> FramePlane:
    """Frontal plane rotated by yaw (about world y) and pitch (about world x)."""
    yaw, pitch = np.radians(yaw_deg), np.radians(pitch_deg)
    n = np.array([np.sin(yaw) * np.cos(pitch), -np.sin(pitch), -np.cos(yaw) * np.cos(pitch)])
    return FramePlane.from_normal(origin, n)
