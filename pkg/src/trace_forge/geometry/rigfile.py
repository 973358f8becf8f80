"""Plain-text key/value rig description.

Grammar (one statement per line, ``#`` starts a comment)::

    line       := key "=" value
    key        := "format" | "preset" | "working_distance_mm" | "focal_length_px"
                | "image_size" | "camera." INDEX "." camkey
    camkey     := "focal_length_px" | "principal_point" | "image_size"
                | "rotation" | "translation" | "yaw_pitch_deg"
    value      := whitespace-separated numbers

``preset = default`` builds :func:`default_rig` using the top-level
``working_distance_mm``, ``focal_length_px`` and ``image_size``; per-camera
keys then override individual fields. Without a preset all four cameras must
be fully specified (rotation as 9 row-major numbers, translation in mm).
Units are millimetres and pixels.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import IoError, ParseError
from .camera import (
    DEFAULT_FOCAL_PX,
    DEFAULT_IMAGE_SIZE,
    DEFAULT_VIEW_OFFSETS_DEG,
    DEFAULT_WORKING_DISTANCE_MM,
    CameraRig,
    PinholeCamera,
    default_rig,
)

RIG_FORMAT = "trace-forge-rig 1"
_CAM_KEYS = {
    "focal_length_px": 1,
    "principal_point": 2,
    "image_size": 2,
    "rotation": 9,
    "translation": 3,
    "yaw_pitch_deg": 2,
}
_TOP_KEYS = {"working_distance_mm": 1, "focal_length_px": 1, "image_size": 2}


def _numbers(text: str, count: int, lineno: int, path) -> list[float]:
    try:
        vals = [float(tok) for tok in text.split()]
    except ValueError:
        raise ParseError(f"expected {count} numbers, got {text!r}", lineno, path) from None
    if len(vals) != count:
        raise ParseError(f"expected {count} numbers, got {len(vals)}", lineno, path)
    return vals


def parse_rig(text: str, path=None) -> CameraRig:
    top: dict[str, list[float]] = {}
    cams: dict[int, dict[str, list[float]]] = {}
    preset = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw!r}", lineno, path)
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "format":
            if value != RIG_FORMAT.split(" ", 1)[1] and value != RIG_FORMAT:
                raise ParseError(f"unsupported rig format {value!r}", lineno, path)
        elif key == "preset":
            if value != "default":
                raise ParseError(f"unknown preset {value!r}", lineno, path)
            preset = value
        elif key in _TOP_KEYS:
            top[key] = _numbers(value, _TOP_KEYS[key], lineno, path)
        elif key.startswith("camera."):
            parts = key.split(".")
            if len(parts) != 3 or not parts[1].isdigit() or parts[2] not in _CAM_KEYS:
                raise ParseError(f"unknown camera key {key!r}", lineno, path)
            idx = int(parts[1])
            if idx > 3:
                raise ParseError("camera index must be 0..3", lineno, path)
            cams.setdefault(idx, {})[parts[2]] = _numbers(value, _CAM_KEYS[parts[2]], lineno, path)
        else:
            raise ParseError(f"unknown key {key!r}", lineno, path)

    wd = top.get("working_distance_mm", [DEFAULT_WORKING_DISTANCE_MM])[0]
    focal = top.get("focal_length_px", [DEFAULT_FOCAL_PX])[0]
    size = tuple(int(v) for v in top.get("image_size", DEFAULT_IMAGE_SIZE))
    try:
        if preset is not None or all("yaw_pitch_deg" in cams.get(i, {}) for i in range(4)):
            offsets = [
                tuple(cams.get(i, {}).get("yaw_pitch_deg", DEFAULT_VIEW_OFFSETS_DEG[i]))
                for i in range(4)
            ]
            base = default_rig(wd, focal, size, offsets)
        else:
            base = None
        out = []
        for i in range(4):
            spec = cams.get(i, {})
            if base is None:
                missing = [k for k in ("focal_length_px", "rotation", "translation") if k not in spec]
                if missing:
                    raise ParseError(f"camera {i} lacks {', '.join(missing)} and no preset is set", None, path)
                cam_size = tuple(int(v) for v in spec.get("image_size", size))
                pp = spec.get("principal_point", (cam_size[0] / 2.0, cam_size[1] / 2.0))
                out.append(
                    PinholeCamera(
                        spec["focal_length_px"][0],
                        pp,
                        cam_size,
                        np.reshape(spec["rotation"], (3, 3)),
                        spec["translation"],
                    )
                )
            else:
                c = base[i]
                out.append(
                    PinholeCamera(
                        spec.get("focal_length_px", [c.focal_length_px])[0],
                        spec.get("principal_point", c.principal_point),
                        tuple(int(v) for v in spec.get("image_size", c.image_size)),
                        np.reshape(spec["rotation"], (3, 3)) if "rotation" in spec else c.rotation,
                        spec.get("translation", c.translation),
                    )
                )
        return CameraRig(tuple(out), wd)
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"invalid rig: {exc}", None, path) from None


def read_rig(path) -> CameraRig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read rig file {path}: {exc}") from exc
    return parse_rig(text, path)


def format_rig(rig: CameraRig) -> str:
    """Fully explicit description; floats use repr so reading back is exact."""
    lines = [f"format = {RIG_FORMAT}", f"working_distance_mm = {rig.working_distance_mm!r}"]
    for i, cam in enumerate(rig.cameras):
        lines.append(f"camera.{i}.focal_length_px = {cam.focal_length_px!r}")
        lines.append(f"camera.{i}.principal_point = " + " ".join(repr(float(v)) for v in cam.principal_point))
        lines.append(f"camera.{i}.image_size = {cam.image_size[0]} {cam.image_size[1]}")
        lines.append(f"camera.{i}.rotation = " + " ".join(repr(float(v)) for v in cam.rotation.reshape(-1)))
        lines.append(f"camera.{i}.translation = " + " ".join(repr(float(v)) for v in cam.translation))
    return "\n".join(lines) + "\n"


def write_rig(rig: CameraRig, path) -> None:
    try:
        Path(path).write_text(format_rig(rig), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write rig file {path}: {exc}") from exc
