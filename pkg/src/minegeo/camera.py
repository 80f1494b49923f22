"""Pinhole camera model: intrinsics and rigid poses, plus projection helpers.

Pixel (0, 0) is the centre of the top-left pixel; u grows rightward and v
downward, so the in-bounds region is [-0.5, width - 0.5) x [-0.5, height - 0.5).
No lens distortion is modelled.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, ValidationError, ZoneMismatchError
from . import geodesy


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_bounds(self, uv):
        uv = np.asarray(uv, dtype=float)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= -0.5) & (u < self.width - 0.5) & (v >= -0.5) & (v < self.height - 0.5)


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Camera-from-world rotation plus the camera centre in world coordinates."""

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        c = np.array(self.center, dtype=float).reshape(3)
        if not geodesy.is_rotation(r, tol=1e-6):
            raise ValidationError("pose rotation is not a proper rotation matrix")
        r.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "center", c)

    @property
    def translation(self):
        """t in x_cam = R x_world + t."""
        return -self.rotation @ self.center

    @classmethod
    def from_rt(cls, rotation, translation):
        rotation = np.asarray(rotation, dtype=float)
        return cls(rotation, -rotation.T @ np.asarray(translation, dtype=float))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def __repr__(self):
        return f"RigidPose(center={self.center.tolist()})"


@dataclass(frozen=True, eq=False)
class GeoPose:
    """A RigidPose whose world frame is UTM-ENU in a given zone."""

    pose: RigidPose
    zone: int
    hemisphere: str = "N"

    def __post_init__(self):
        if not 1 <= int(self.zone) <= 60:
            raise ValidationError(f"UTM zone {self.zone} outside 1..60")

    def check_zone(self, zone, hemisphere="N"):
        if (int(zone), hemisphere) != (int(self.zone), self.hemisphere):
            raise ZoneMismatchError(
                f"zone {zone}{hemisphere} does not match pose zone {self.zone}{self.hemisphere}"
            )

    @classmethod
    def from_metadata(cls, position: geodesy.GeoPosition, attitude: geodesy.EulerNed,
                      forced_zone=None):
        """Camera pose from GNSS position and camera attitude in NED."""
        utm = geodesy.wgs84_to_utm(position, forced_zone)
        r_world_cam = geodesy.rotation_enu_from_camera(attitude)
        return cls(RigidPose(r_world_cam.T, utm.enu), utm.zone, utm.hemisphere)


def world_to_camera(pose: RigidPose, x_world):
    x = np.asarray(x_world, dtype=float)
    return (x - pose.center) @ pose.rotation.T


def camera_to_world(pose: RigidPose, x_cam):
    x = np.asarray(x_cam, dtype=float)
    return x @ pose.rotation + pose.center


def project(k: Intrinsics, x_cam):
    """Pinhole projection of one or more camera-frame points.

    Returns ``(uv, depth)``. Raises BehindCameraError if any depth <= 0.
    """
    x = np.asarray(x_cam, dtype=float)
    z = x[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point on or behind the camera")
    uv = np.stack([k.fx * x[..., 0] / z + k.cx, k.fy * x[..., 1] / z + k.cy], axis=-1)
    return uv, z


def backproject(k: Intrinsics, uv, depth):
    uv = np.asarray(uv, dtype=float)
    d = np.asarray(depth, dtype=float)
    if np.any(d <= 0):
        raise ValidationError("depth must be positive")
    x = (uv[..., 0] - k.cx) / k.fx * d
    y = (uv[..., 1] - k.cy) / k.fy * d
    return np.stack([x, y, d * np.ones_like(x)], axis=-1)


def project_world(k: Intrinsics, pose: RigidPose, x_world):
    """World points to pixels without raising; behind-camera entries get NaN pixels."""
    xc = world_to_camera(pose, x_world)
    z = xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([k.fx * xc[..., 0] / z + k.cx, k.fy * xc[..., 1] / z + k.cy], axis=-1)
    uv[z <= 0] = np.nan
    return uv, z
