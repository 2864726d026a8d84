"""Pinhole camera: world-to-camera transform, projection and its Jacobian."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .math3d import quat_to_rotation, rotation_to_quat

Z_NEAR = 1e-4  # points at or behind this camera-space depth are culled


class BehindCamera(Exception):
    """Point is at or behind the near plane; callers cull, not crash."""


@dataclass
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_cam_rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    world_to_cam_trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be at least 1")

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.world_to_cam_rot.T @ self.world_to_cam_trans

    def optical_axis(self) -> np.ndarray:
        """Viewing direction (camera +z) in world coordinates."""
        return self.world_to_cam_rot.T @ np.array([0.0, 0.0, 1.0])


def to_camera(cam: PinholeCamera, x: np.ndarray) -> np.ndarray:
    return cam.world_to_cam_rot @ np.asarray(x, dtype=float) + cam.world_to_cam_trans


def project(cam: PinholeCamera, x_cam: np.ndarray) -> tuple[np.ndarray, float]:
    """Perspective projection of a camera-space point to (pixel uv, depth)."""
    x, y, z = np.asarray(x_cam, dtype=float)
    if z <= Z_NEAR:
        raise BehindCamera(f"depth {z:g} <= {Z_NEAR:g}")
    return np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy]), float(z)


def projection_jacobian(cam: PinholeCamera, x_cam: np.ndarray) -> np.ndarray:
    """2x3 Jacobian of the projection at a camera-space point."""
    x, y, z = np.asarray(x_cam, dtype=float)
    if z <= Z_NEAR:
        raise BehindCamera(f"depth {z:g} <= {Z_NEAR:g}")
    return np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
            [0.0, cam.fy / z, -cam.fy * y / (z * z)],
        ]
    )


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera (rotation, translation) looking from eye at target.

    Camera axes: +z toward target, +x right, +y down (image v grows down).
    """
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    nz = np.linalg.norm(z)
    if nz == 0:
        raise ValueError("eye and target coincide")
    z = z / nz
    up = np.asarray(up, dtype=float)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    return rot, -rot @ eye


@dataclass
class CameraView:
    """A camera plus the dataset bookkeeping attached to it."""

    id: str
    camera: PinholeCamera
    image_path: str | None = None


def load_cameras(path) -> list[CameraView]:
    """Read a camera-set JSON document (see README for the schema)."""
    with open(path) as f:
        entries = json.load(f)
    views = []
    for e in entries:
        cam = PinholeCamera(
            fx=float(e["fx"]),
            fy=float(e["fy"]),
            cx=float(e["cx"]),
            cy=float(e["cy"]),
            width=int(e["width"]),
            height=int(e["height"]),
            world_to_cam_rot=quat_to_rotation(np.array(e["rotation"], dtype=float)),
            world_to_cam_trans=np.array(e["translation"], dtype=float),
        )
        views.append(CameraView(id=str(e["id"]), camera=cam, image_path=e.get("image_path")))
    return views


def save_cameras(views: list[CameraView], path) -> None:
    entries = []
    for v in views:
        cam = v.camera
        entries.append(
            {
                "id": v.id,
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "width": cam.width,
                "height": cam.height,
                "rotation": rotation_to_quat(cam.world_to_cam_rot).tolist(),
                "translation": np.asarray(cam.world_to_cam_trans, dtype=float).tolist(),
                "image_path": v.image_path,
            }
        )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(entries, f, indent=2)
        f.write("\n")
