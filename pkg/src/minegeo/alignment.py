"""Similarity alignment (Umeyama) and its two uses.

``geo_register_model`` maps a sparse model's local frame onto UTM using the
GNSS positions of its database images; ``anchor_query_trajectory`` maps a
query-sequence trajectory onto the global frame using the frames that PnP
managed to register, which also places the frames that failed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import RigidPose
from .errors import DegenerateConfigurationError, ParseError, ValidationError
from . import geodesy
from .io.sparse import Image, Point3D, SparseModel, pose_to_qt
from .io.records import TRAJECTORY_HEADER


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError("similarity scale must be positive")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls):
        return cls(1.0, np.eye(3), np.zeros(3))

    def inverse(self):
        rt = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, rt, -rt @ self.translation / self.scale)

    def compose(self, other):
        """self after other."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m


def umeyama(src, dst, with_scale=True) -> SimilarityTransform:
    """Least-squares s, R, t with dst ~ s R src + t (Umeyama 1991)."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    if len(src) != len(dst):
        raise ValidationError("src and dst must have the same number of points")
    if len(src) < 3:
        raise DegenerateConfigurationError(f"need at least 3 point pairs, got {len(src)}")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] <= 1e-12 * max(1.0, np.abs(src).max()) or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateConfigurationError("source points are coincident or collinear")
    n = len(src)
    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2] = -1.0
    r = (u * sign) @ vt
    if with_scale:
        var_s = np.sum(xs * xs) / n
        s = float(np.sum(d * sign) / var_s)
    else:
        s = 1.0
    t = mu_d - s * r @ mu_s
    return SimilarityTransform(s, r, t)


def umeyama_trimmed(src, dst, with_scale=True, drop_fraction=0.10):
    """Fit, drop the worst residuals, refit once."""
    src = np.asarray(src, dtype=float).reshape(-1, 3)
    dst = np.asarray(dst, dtype=float).reshape(-1, 3)
    t = umeyama(src, dst, with_scale)
    n_drop = int(math.floor(drop_fraction * len(src)))
    if n_drop == 0 or len(src) - n_drop < 3:
        return t
    res = np.linalg.norm(apply_similarity(t, src) - dst, axis=1)
    keep = np.sort(np.argsort(res, kind="stable")[: len(src) - n_drop])
    return umeyama(src[keep], dst[keep], with_scale)


def apply_similarity(t: SimilarityTransform, x):
    x = np.asarray(x, dtype=float)
    return t.scale * x @ t.rotation.T + t.translation


def apply_to_pose(t: SimilarityTransform, p: RigidPose) -> RigidPose:
    return RigidPose(p.rotation @ t.rotation.T, apply_similarity(t, p.center))


def alignment_residuals(t, src, dst):
    return np.linalg.norm(apply_similarity(t, src) - np.asarray(dst, dtype=float), axis=1)


# ------------------------------------------------------------ trajectories

@dataclass(eq=False)
class TrajectoryEntry:
    name: str
    pose: RigidPose | None
    registered: bool = False
    anchored: bool = False

    @property
    def status(self):
        if self.registered:
            return "registered"
        return "anchored" if self.anchored else "failed"


@dataclass(eq=False)
class Trajectory:
    entries: list = field(default_factory=list)
    frame: str = "local"
    zone: int | None = None
    hemisphere: str = "N"

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValidationError("trajectory image names must be unique")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def get(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @classmethod
    def from_model(cls, model: SparseModel, registered=()):
        registered = set(registered)
        ims = sorted(model.images.values(), key=lambda im: im.name)
        return cls([TrajectoryEntry(im.name, im.pose, im.name in registered) for im in ims])


@dataclass(eq=False)
class AnchorResult:
    success: bool
    trajectory: Trajectory
    transform: SimilarityTransform | None
    residuals: dict
    reason: str = ""


def anchor_query_trajectory(local: Trajectory, registered_global, with_scale=True, trim=False) -> AnchorResult:
    """Fit local -> global on frames present in both and map every local pose.

    ``registered_global`` maps image name to its PnP pose in the global frame.
    Frames without a registration come back with ``anchored=True``. Fewer
    than three shared frames (or a degenerate layout) gives ``success=False``
    and the input trajectory unchanged.
    """
    shared = [e.name for e in local if e.pose is not None and e.name in registered_global]
    if len(shared) < 3:
        return AnchorResult(False, local, None, {}, f"only {len(shared)} shared registered frames")
    src = np.array([local.get(n).pose.center for n in shared])
    dst = np.array([registered_global[n].center for n in shared])
    try:
        t = (umeyama_trimmed if trim else umeyama)(src, dst, with_scale)
    except DegenerateConfigurationError as exc:
        return AnchorResult(False, local, None, {}, str(exc))
    res = dict(zip(shared, alignment_residuals(t, src, dst)))
    out = []
    for e in local:
        if e.pose is None:
            out.append(replace(e))
            continue
        reg = e.name in registered_global
        out.append(TrajectoryEntry(e.name, apply_to_pose(t, e.pose), registered=reg, anchored=not reg))
    return AnchorResult(True, Trajectory(out, "utm"), t, res)


# ---------------------------------------------------------- geo-registration

@dataclass(eq=False)
class GeoRegistration:
    model: SparseModel
    transform: SimilarityTransform
    residuals: dict
    zone: int
    hemisphere: str

    @property
    def rms(self):
        r = np.array(list(self.residuals.values()))
        return float(np.sqrt(np.mean(r * r)))


def transform_model(model: SparseModel, t: SimilarityTransform) -> SparseModel:
    images = {}
    for iid, im in model.images.items():
        q, tv = pose_to_qt(apply_to_pose(t, im.pose))
        images[iid] = Image(im.id, im.name, q, tv, im.camera_id, im.xys.copy(), im.point3d_ids.copy())
    points = {
        pid: Point3D(p.id, apply_similarity(t, p.xyz), p.rgb.copy(), p.error * t.scale,
                     p.image_ids.copy(), p.point2d_idxs.copy())
        for pid, p in model.points3d.items()
    }
    return SparseModel(dict(model.cameras), images, points)


def geo_register_model(model: SparseModel, sidecar, forced_zone=None, trim=False) -> GeoRegistration:
    """Similarity from model camera centres to sidecar GNSS positions in UTM.

    The UTM zone is ``forced_zone`` or the natural zone of the first matched
    image (by name); all positions are projected into that one zone.
    """
    names = sorted(im.name for im in model.images.values() if im.name in sidecar)
    if len(names) < 3:
        raise DegenerateConfigurationError(f"only {len(names)} model images found in the sidecar")
    first = sidecar[names[0]].position
    zone = forced_zone or geodesy.natural_zone(first.latitude, first.longitude)
    by_name = model.name_index()
    src, dst = [], []
    hemi = None
    for n in names:
        u = geodesy.wgs84_to_utm(sidecar[n].position, zone)
        if hemi is None:
            hemi = u.hemisphere
        elif u.hemisphere != hemi:
            raise ValidationError("sidecar positions straddle the equator")
        src.append(by_name[n].center)
        dst.append(u.enu)
    src, dst = np.array(src), np.array(dst)
    t = (umeyama_trimmed if trim else umeyama)(src, dst, True)
    res = dict(zip(names, alignment_residuals(t, src, dst)))
    return GeoRegistration(transform_model(model, t), t, res, zone, hemi)


# --------------------------------------------------------- trajectory CSV

def write_trajectory_csv(traj: Trajectory, path):
    """Rows sorted by name; the quaternion is the camera-from-world rotation."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for e in sorted(traj, key=lambda e: e.name):
            if e.pose is None:
                w.writerow([e.name, "", "", "", "", "", "", "", int(e.registered), int(e.anchored)])
                continue
            q, _ = pose_to_qt(e.pose)
            w.writerow([e.name, *(repr(float(v)) for v in e.pose.center), *(repr(float(v)) for v in q),
                        int(e.registered), int(e.anchored)])


def read_trajectory_csv(path, zone=None, hemisphere="N") -> Trajectory:
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRAJECTORY_HEADER:
            raise ParseError(path, f"expected header {','.join(TRAJECTORY_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(TRAJECTORY_HEADER):
                raise ParseError(path, "wrong field count", line=lineno)
            try:
                reg, anc = bool(int(row[8])), bool(int(row[9]))
                if row[1] == "":
                    pose = None
                else:
                    c = np.array([float(v) for v in row[1:4]])
                    q = np.array([float(v) for v in row[4:8]])
                    r = Rotation.from_quat(q / np.linalg.norm(q), scalar_first=True).as_matrix()
                    pose = RigidPose(r, c)
            except ValueError as exc:
                raise ParseError(path, str(exc), line=lineno) from None
            entries.append(TrajectoryEntry(row[0], pose, reg, anc))
    return Trajectory(entries, "utm", zone, hemisphere)
