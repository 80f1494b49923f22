"""Point-cloud visibility and 3D positioning of 2D detections.

A detection is positioned from the cloud points whose projections fall
strictly inside its box. Of those, only the foreground cluster (depth within
``depth_band_m`` of the nearest) is kept, so terrain seen past an object's
silhouette does not pull the estimate. There is no z-buffer; the depth band
is the occlusion heuristic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import GeoPose, Intrinsics
from .errors import ZoneMismatchError
from .geodesy import UtmCoord
from .io.ply import PointCloud


@dataclass(frozen=True, eq=False)
class ProjectedPoints:
    """Visible points of a cloud: indices into the cloud, pixels (N, 2), depths (N,)."""

    indices: np.ndarray
    pixels: np.ndarray
    depths: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class GeoObject:
    label: str
    confidence: float
    position: UtmCoord
    support: int
    source_image: str
    box: tuple
    box_index: int = 0


def _check_zone(cloud: PointCloud, pose: GeoPose):
    if cloud.frame != "utm":
        raise ZoneMismatchError("point cloud is not in a UTM frame")
    if (cloud.zone, cloud.hemisphere) != (pose.zone, pose.hemisphere):
        raise ZoneMismatchError(
            f"cloud zone {cloud.zone}{cloud.hemisphere} != pose zone {pose.zone}{pose.hemisphere}"
        )


def project_cloud(cloud: PointCloud, pose: GeoPose, k: Intrinsics) -> ProjectedPoints:
    """Points in front of the camera that land inside the image, in cloud order."""
    _check_zone(cloud, pose)
    p = pose.pose
    xc = (cloud.points - p.center) @ p.rotation.T
    z = xc[:, 2]
    front = np.flatnonzero(z > 0)
    zf = z[front]
    u = k.fx * xc[front, 0] / zf + k.cx
    v = k.fy * xc[front, 1] / zf + k.cy
    inside = (u >= -0.5) & (u < k.width - 0.5) & (v >= -0.5) & (v < k.height - 0.5)
    idx = front[inside]
    return ProjectedPoints(idx, np.column_stack([u[inside], v[inside]]), zf[inside])


def position_detection(box, projected: ProjectedPoints, cloud: PointCloud, depth_band_m=2.0):
    """Return ``(position xyz, support)`` or None when no point falls in the box."""
    x0, y0, x1, y1 = box
    u, v = projected.pixels[:, 0], projected.pixels[:, 1]
    inside = (u > x0) & (u < x1) & (v > y0) & (v < y1)
    if not np.any(inside):
        return None
    d = projected.depths[inside]
    keep = d <= d.min() + depth_band_m
    pts = cloud.points[projected.indices[inside][keep]]
    return pts.mean(axis=0), int(keep.sum())


def localize_detections(detections, cloud: PointCloud, pose: GeoPose, k: Intrinsics,
                        image_name="", depth_band_m=2.0):
    """Position every detection of one image.

    Returns ``(objects, unlocalized)``; ``unlocalized`` holds
    ``(box_index, detection)`` pairs. Output follows detection order.
    """
    objects, unlocalized = [], []
    if not detections:
        _check_zone(cloud, pose)
        return objects, unlocalized
    projected = project_cloud(cloud, pose, k)
    for i, det in enumerate(detections):
        hit = position_detection(det.box, projected, cloud, depth_band_m)
        if hit is None:
            unlocalized.append((i, det))
            continue
        xyz, support = hit
        pos = UtmCoord(float(xyz[0]), float(xyz[1]), float(xyz[2]), pose.zone, pose.hemisphere)
        objects.append(GeoObject(det.label, det.confidence, pos, support, image_name, det.box, i))
    return objects, unlocalized
