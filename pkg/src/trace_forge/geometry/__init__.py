"""Camera rig, projection, polar ray casting and the classical tracer."""

from .baseline import fit_frame_plane, geometric_trace, mask_edges, polar_profile, triangulate_rays
from .camera import (
    CameraRig,
    FramePlane,
    PinholeCamera,
    backproject_ray,
    default_rig,
    frontal_plane,
    look_at_camera,
    project,
    tilted_plane,
)
from .raycast import ray_cast_radius
from .rigfile import format_rig, parse_rig, read_rig, write_rig

__all__ = [
    "CameraRig",
    "FramePlane",
    "PinholeCamera",
    "backproject_ray",
    "default_rig",
    "fit_frame_plane",
    "format_rig",
    "frontal_plane",
    "geometric_trace",
    "look_at_camera",
    "mask_edges",
    "parse_rig",
    "polar_profile",
    "project",
    "ray_cast_radius",
    "read_rig",
    "tilted_plane",
    "triangulate_rays",
    "write_rig",
]
