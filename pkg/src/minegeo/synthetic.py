"""Synthetic missions with known ground truth.

A smooth random heightfield stands in for open-pit terrain. Database and
query cameras fly over it at near-nadir attitude. Everything (cloud, poses,
correspondences, detections, descriptor images) is generated from one seed,
so every pipeline stage can be checked against exact references.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import hashlib
import json
import os

import numpy as np

from .camera import GeoPose, Intrinsics, RigidPose, project_world
from .errors import ValidationError
from . import geodesy
from .io.ply import PointCloud, write_ply
from .io.records import (SITE_CLASSES, Detection, Match, MatchFile, SidecarRecord,
                         write_detections, write_matches, write_pose_sidecar)
from .io.sparse import Camera, Image, Point3D, SparseModel, pose_to_qt, write_sparse_model
from .alignment import SimilarityTransform, apply_similarity, apply_to_pose
from .retrieval import DescriptorIndex, thumbnail_descriptor, write_descriptors


def derive_seed(master, *parts):
    """Stable 63-bit seed from a master seed and string parts."""
    h = hashlib.sha256(str(master).encode())
    for p in parts:
        h.update(b"\x00" + str(p).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


@dataclass(frozen=True)
class SceneParams:
    grid_nx: int = 224
    grid_ny: int = 224
    spacing: float = 1.0
    amplitude: float = 6.0
    n_db: int = 60
    n_query: int = 20
    n_objects: int = 10
    seed: int = 0
    db_altitude: float = 60.0
    query_altitude: float = 60.0
    attitude_jitter_deg: float = 2.0
    object_radius: float = 2.0
    origin_lat: float = 38.5
    origin_lon: float = 23.5
    image_width: int = 800
    image_height: int = 600
    focal_px: float = 700.0

    def validate(self):
        if min(self.grid_nx, self.grid_ny) < 2 or self.spacing <= 0:
            raise ValidationError("terrain grid needs at least 2x2 nodes and positive spacing")
        if self.n_db < 1 or self.n_query < 1 or self.n_objects < 0:
            raise ValidationError("n_db and n_query must be >= 1, n_objects >= 0")
        if self.amplitude < 0 or self.object_radius <= 0:
            raise ValidationError("amplitude must be >= 0 and object radius > 0")
        if min(self.db_altitude, self.query_altitude) <= self.amplitude:
            raise ValidationError("flight altitude must clear the terrain")


@dataclass(eq=False)
class View:
    name: str
    geopose: GeoPose
    attitude: geodesy.EulerNed
    position: geodesy.GeoPosition


@dataclass(frozen=True)
class Marker:
    label: str
    position: np.ndarray
    radius: float


@dataclass(eq=False)
class SyntheticScene:
    params: SceneParams
    cloud: PointCloud
    intrinsics: Intrinsics
    db: list
    queries: list
    markers: list
    origin: np.ndarray  # UTM (E, N) of the grid corner
    terrain_waves: np.ndarray  # rows (kx, ky, phase, weight)
    texture_waves: np.ndarray
    zone: int = 0
    hemisphere: str = "N"

    def view(self, name) -> View:
        for v in self.db + self.queries:
            if v.name == name:
                return v
        raise KeyError(name)

    def height(self, e, n):
        return _waves(self.terrain_waves, np.asarray(e) - self.origin[0], np.asarray(n) - self.origin[1])

    def texture(self, e, n):
        return _waves(self.texture_waves, np.asarray(e) - self.origin[0], np.asarray(n) - self.origin[1])


def _waves(waves, x, y):
    out = np.zeros(np.broadcast(x, y).shape)
    for kx, ky, ph, w in waves:
        out += w * np.sin(kx * x + ky * y + ph)
    return out


def _random_waves(rng, count, min_wavelength, max_wavelength, total):
    wl = rng.uniform(min_wavelength, max_wavelength, count)
    ang = rng.uniform(0, np.pi, count)
    k = 2 * np.pi / wl
    w = rng.uniform(0.5, 1.0, count)
    w = w / w.sum() * total
    return np.column_stack([k * np.cos(ang), k * np.sin(ang), rng.uniform(0, 2 * np.pi, count), w])


def _lawnmower(n, x_lo, x_hi, y_lo, y_hi):
    cols = int(np.ceil(np.sqrt(n * (x_hi - x_lo) / max(y_hi - y_lo, 1e-9))))
    cols = max(1, min(cols, n))
    rows = int(np.ceil(n / cols))
    xs = np.linspace(x_lo, x_hi, cols) if cols > 1 else np.array([(x_lo + x_hi) / 2])
    ys = np.linspace(y_lo, y_hi, rows) if rows > 1 else np.array([(y_lo + y_hi) / 2])
    pts = []
    for r, y in enumerate(ys):
        row = xs if r % 2 == 0 else xs[::-1]
        pts += [(x, y) for x in row]
    return np.array(pts[:n])


def generate_scene(params: SceneParams = SceneParams()) -> SyntheticScene:
    params.validate()
    rng = np.random.default_rng(params.seed)
    p = params
    utm0 = geodesy.wgs84_to_utm(geodesy.GeoPosition(p.origin_lat, p.origin_lon))
    origin = np.round(np.array([utm0.easting, utm0.northing]))
    size_x, size_y = (p.grid_nx - 1) * p.spacing, (p.grid_ny - 1) * p.spacing

    terrain_waves = _random_waves(rng, 5, 40.0, 160.0, p.amplitude)
    texture_waves = _random_waves(rng, 60, 100.0, 300.0, 1.0)

    gx, gy = np.meshgrid(np.arange(p.grid_nx) * p.spacing, np.arange(p.grid_ny) * p.spacing)
    jitter = rng.uniform(-0.25, 0.25, (2,) + gx.shape) * p.spacing
    x = np.clip(gx + jitter[0], 0, size_x).ravel()
    y = np.clip(gy + jitter[1], 0, size_y).ravel()
    z = _waves(terrain_waves, x, y)
    shade = _waves(texture_waves, x, y)
    grey = np.clip(128 + 100 * shade, 0, 255).astype(np.uint8)
    cloud = PointCloud(np.column_stack([x + origin[0], y + origin[1], z]),
                       np.repeat(grey[:, None], 3, axis=1), "utm", utm0.zone, utm0.hemisphere)

    k = Intrinsics(p.focal_px, p.focal_px, p.image_width / 2, p.image_height / 2,
                   p.image_width, p.image_height)
    foot_x = p.image_width / p.focal_px * p.db_altitude / 2
    foot_y = p.image_height / p.focal_px * p.db_altitude / 2
    margin_x, margin_y = min(foot_x, size_x / 2), min(foot_y, size_y / 2)

    def make_view(name, ex, ny, altitude):
        j = p.attitude_jitter_deg
        att = geodesy.EulerNed(rng.uniform(-j, j), -90.0 + rng.uniform(-j, j), rng.uniform(-j, j))
        e, n = origin[0] + ex, origin[1] + ny
        up = altitude + float(_waves(terrain_waves, ex, ny))
        geo = geodesy.utm_to_wgs84(geodesy.UtmCoord(e, n, up, utm0.zone, utm0.hemisphere))
        gp = GeoPose(RigidPose(geodesy.rotation_enu_from_camera(att).T, [e, n, up]),
                     utm0.zone, utm0.hemisphere)
        return View(name, gp, att, geo)

    db_xy = _lawnmower(p.n_db, margin_x, size_x - margin_x, margin_y, size_y - margin_y)
    db = [make_view(f"db_{i:04d}.jpg", ex, ny, p.db_altitude) for i, (ex, ny) in enumerate(db_xy)]

    # query pass: a gentle S-curve across the block
    s = np.linspace(0.0, 1.0, p.n_query)
    qx = margin_x + s * (size_x - 2 * margin_x)
    qy = size_y / 2 + 0.3 * (size_y / 2 - margin_y) * np.sin(2 * np.pi * s) + rng.uniform(-2, 2, p.n_query)
    qy = np.clip(qy, margin_y, size_y - margin_y)
    queries = [make_view(f"query_{i:04d}.jpg", ex, ny, p.query_altitude) for i, (ex, ny) in enumerate(zip(qx, qy))]

    markers = []
    r = p.object_radius
    for i in range(p.n_objects):
        # markers sit where the query pass flies, so they get imaged
        q = queries[rng.integers(len(queries))].geopose.pose.center
        ex = np.clip(q[0] - origin[0] + rng.uniform(-0.6, 0.6) * foot_x, 2 * r, size_x - 2 * r)
        ny = np.clip(q[1] - origin[1] + rng.uniform(-0.6, 0.6) * foot_y, 2 * r, size_y - 2 * r)
        pos = np.array([origin[0] + ex, origin[1] + ny, float(_waves(terrain_waves, ex, ny))])
        markers.append(Marker(SITE_CLASSES[i % len(SITE_CLASSES)], pos, r))

    scene = SyntheticScene(params, cloud, k, db, queries, markers, origin, terrain_waves,
                           texture_waves, utm0.zone, utm0.hemisphere)
    for v in db + queries:
        uv, depth = project_world(k, v.geopose.pose, cloud.points)
        if np.count_nonzero((depth > 0) & k.in_bounds(uv)) < 100:
            raise ValidationError(f"view {v.name} sees fewer than 100 terrain points")
    return scene


def visible_points(scene: SyntheticScene, name, points=None):
    v = scene.view(name)
    pts = scene.cloud.points if points is None else points
    uv, depth = project_world(scene.intrinsics, v.geopose.pose, pts)
    vis = np.flatnonzero((depth > 0) & scene.intrinsics.in_bounds(uv))
    return vis, uv[vis]


def render_correspondences(scene: SyntheticScene, name, noise_px=0.0, outlier_fraction=0.0,
                           seed=0, max_points=None):
    """Visible terrain points with noisy pixels; returns (Correspondences, inlier labels)."""
    from .pnp import Correspondences

    rng = np.random.default_rng(derive_seed(seed, name))
    vis, uv = visible_points(scene, name)
    if len(vis) == 0:
        raise ValidationError(f"no terrain visible from {name}")
    if max_points is not None and len(vis) > max_points:
        pick = np.sort(rng.choice(len(vis), max_points, replace=False))
        vis, uv = vis[pick], uv[pick]
    px = uv + rng.normal(0.0, noise_px, uv.shape) if noise_px > 0 else uv.copy()
    n_out = int(np.floor(outlier_fraction * len(vis) + 0.5))
    inlier = np.ones(len(vis), dtype=bool)
    if n_out:
        out = rng.choice(len(vis), n_out, replace=False)
        inlier[out] = False
        k = scene.intrinsics
        px[out] = rng.uniform([-0.5, -0.5], [k.width - 0.5, k.height - 0.5], (n_out, 2))
    return Correspondences(px, scene.cloud.points[vis], vis), inlier


def render_detections(scene: SyntheticScene, name, confidence=0.9):
    """Boxes for markers whose centre is visible: projected square of the marker radius.

    Returns (detections, ground-truth markers) with matching order.
    """
    k = scene.intrinsics
    pose = scene.view(name).geopose.pose
    dets, truth = [], []
    for m in scene.markers:
        uv, depth = project_world(k, pose, m.position[None])
        if not (depth[0] > 0 and k.in_bounds(uv)[0]):
            continue
        u, v = uv[0]
        hx, hy = k.fx * m.radius / depth[0], k.fy * m.radius / depth[0]
        box = (max(u - hx, -0.5), max(v - hy, -0.5), min(u + hx, k.width - 0.5), min(v + hy, k.height - 0.5))
        dets.append(Detection(m.label, confidence, box))
        truth.append(m)
    return dets, truth


def render_view_image(scene: SyntheticScene, name, width=96, height=72):
    """Grayscale rendering of the ground texture, used for retrieval descriptors.

    Rays are cast onto the mean-terrain plane; relief is ignored.
    """
    k = scene.intrinsics
    pose = scene.view(name).geopose.pose
    us = (np.arange(width) + 0.5) * k.width / width - 0.5
    vs = (np.arange(height) + 0.5) * k.height / height - 0.5
    uu, vv = np.meshgrid(us, vs)
    rays_cam = np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)
    rays = rays_cam @ pose.rotation
    c = pose.center
    lam = (0.0 - c[2]) / rays[..., 2]
    e = c[0] + lam * rays[..., 0]
    n = c[1] + lam * rays[..., 1]
    return 128.0 + 100.0 * scene.texture(e, n)


def descriptor_index(scene: SyntheticScene, views):
    return DescriptorIndex([v.name for v in views],
                           [thumbnail_descriptor(render_view_image(scene, v.name)) for v in views])


# ------------------------------------------------------------ mission files

def _random_similarity(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    from scipy.spatial.transform import Rotation
    r = Rotation.from_quat(q).as_matrix()
    return SimilarityTransform(float(rng.uniform(0.05, 0.5)), r, rng.uniform(-50, 50, 3))


def build_db_model(scene: SyntheticScene, seed=0, point_stride=5, to_local=None):
    """Sparse model of the database views.

    Every ``point_stride``-th cloud point is a triangulated point; each image
    also carries a few untriangulated keypoints. ``to_local`` maps UTM into
    the model's frame (identity when None).
    """
    rng = np.random.default_rng(derive_seed(seed, "db-model"))
    t = to_local or SimilarityTransform.identity()
    k = scene.intrinsics
    cam = Camera(1, "PINHOLE", k.width, k.height, (k.fx, k.fy, k.cx, k.cy))
    sparse_idx = np.arange(0, len(scene.cloud), point_stride)
    sparse_pts = scene.cloud.points[sparse_idx]
    tracks = {int(i): [] for i in sparse_idx}
    images = {}
    for iid, v in enumerate(scene.db, start=1):
        vis, uv = visible_points(scene, v.name, sparse_pts)
        ids = sparse_idx[vis].astype(np.int64)
        n_free = 20
        free_uv = rng.uniform([0, 0], [k.width - 1, k.height - 1], (n_free, 2))
        xys = np.vstack([uv, free_uv])
        pids = np.concatenate([ids, -np.ones(n_free, dtype=np.int64)])
        for kp, pid in enumerate(ids):
            tracks[int(pid)].append((iid, kp))
        q, tv = pose_to_qt(apply_to_pose(t, v.geopose.pose))
        images[iid] = Image(iid, v.name, q, tv, 1, xys, pids)
    points = {}
    colors = scene.cloud.colors
    for pid, tr in tracks.items():
        if not tr:
            continue
        points[pid] = Point3D(pid, apply_similarity(t, scene.cloud.points[pid]), colors[pid].copy(), 0.5,
                              np.array([a for a, _ in tr], dtype=np.int32),
                              np.array([b for _, b in tr], dtype=np.int32))
    # untracked points would dangle; drop their keypoint references too
    for im in images.values():
        for kp, pid in enumerate(im.point3d_ids):
            if pid != -1 and int(pid) not in points:
                im.point3d_ids[kp] = -1
    return SparseModel({1: cam}, images, points)


def build_query_matches(scene: SyntheticScene, model: SparseModel, name, noise_px=0.5,
                        outlier_fraction=0.0, seed=0, max_db_images=8, per_image=60):
    """Query->database keypoint matches against the nearest database views."""
    rng = np.random.default_rng(derive_seed(seed, "matches", name))
    k = scene.intrinsics
    qpose = scene.view(name).geopose.pose
    by_name = model.name_index()
    dist = [(np.linalg.norm(v.geopose.pose.center[:2] - qpose.center[:2]), v.name) for v in scene.db]
    mf = MatchFile(name)
    for _, db_name in sorted(dist)[:max_db_images]:
        im = by_name[db_name]
        kp = np.flatnonzero(im.point3d_ids != -1)
        pts = scene.cloud.points[im.point3d_ids[kp]]
        uv, depth = project_world(k, qpose, pts)
        ok = np.flatnonzero((depth > 0) & k.in_bounds(uv))
        if len(ok) == 0:
            continue
        if len(ok) > per_image:
            ok = np.sort(rng.choice(ok, per_image, replace=False))
        px = uv[ok] + (rng.normal(0, noise_px, (len(ok), 2)) if noise_px > 0 else 0.0)
        db_kp = kp[ok].copy()
        n_out = int(np.floor(outlier_fraction * len(ok) + 0.5))
        if n_out:
            bad = rng.choice(len(ok), n_out, replace=False)
            db_kp[bad] = rng.choice(kp, n_out)
        for (u, v), j in zip(px, db_kp):
            mf.matches.append(Match(db_name, (float(u), float(v)), int(j)))
    return mf


def build_query_model(scene: SyntheticScene, to_local: SimilarityTransform, noise_m=0.0, seed=0):
    """Secondary reconstruction of the query sequence in its own (unscaled) frame."""
    rng = np.random.default_rng(derive_seed(seed, "query-model"))
    k = scene.intrinsics
    cam = Camera(1, "PINHOLE", k.width, k.height, (k.fx, k.fy, k.cx, k.cy))
    images = {}
    for iid, v in enumerate(scene.queries, start=1):
        pose = v.geopose.pose
        if noise_m > 0:
            pose = RigidPose(pose.rotation, pose.center + rng.normal(0, noise_m, 3))
        q, tv = pose_to_qt(apply_to_pose(to_local, pose))
        images[iid] = Image(iid, v.name, q, tv, 1, np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    return SparseModel({1: cam}, images, {})


@dataclass
class MissionOptions:
    noise_px: float = 0.5
    outlier_fraction: float = 0.2
    withheld_fraction: float = 0.0
    query_model_noise_m: float = 0.0
    seed: int = 0
    cloud_variant: str = "binary_le"


def withheld_queries(scene: SyntheticScene, fraction, seed=0):
    names = [q.name for q in scene.queries]
    n = int(np.floor(fraction * len(names) + 0.5))
    rng = np.random.default_rng(derive_seed(seed, "withheld"))
    return sorted(names[i] for i in rng.choice(len(names), n, replace=False)) if n else []


def write_mission(scene: SyntheticScene, out_dir, opts: MissionOptions = MissionOptions()):
    """Write a complete mission directory and a pipeline config for it.

    Layout: cloud.ply, db_sidecar.csv, db_model_local/, query_model_local/,
    matches/<query>.json, db_descriptors.gdsc, query_descriptors.gdsc,
    detections.json, ground_truth.json, mission.cfg.
    """
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(derive_seed(opts.seed, "mission"))
    write_ply(scene.cloud, os.path.join(out_dir, "cloud.ply"), opts.cloud_variant)

    k = scene.intrinsics
    write_pose_sidecar([SidecarRecord(v.name, v.position, v.attitude, k) for v in scene.db],
                       os.path.join(out_dir, "db_sidecar.csv"))

    db_local = _random_similarity(rng)
    model_local = build_db_model(scene, opts.seed, to_local=db_local)
    write_sparse_model(model_local, os.path.join(out_dir, "db_model_local"), "binary")
    model_utm = build_db_model(scene, opts.seed)

    q_local = _random_similarity(rng)
    write_sparse_model(build_query_model(scene, q_local, opts.query_model_noise_m, opts.seed),
                       os.path.join(out_dir, "query_model_local"), "text")

    withheld = set(withheld_queries(scene, opts.withheld_fraction, opts.seed))
    os.makedirs(os.path.join(out_dir, "matches"), exist_ok=True)
    for q in scene.queries:
        if q.name in withheld:
            continue
        mf = build_query_matches(scene, model_utm, q.name, opts.noise_px, opts.outlier_fraction, opts.seed)
        write_matches(mf, os.path.join(out_dir, "matches", os.path.splitext(q.name)[0] + ".json"))

    write_descriptors(descriptor_index(scene, scene.db), os.path.join(out_dir, "db_descriptors.gdsc"))
    write_descriptors(descriptor_index(scene, scene.queries), os.path.join(out_dir, "query_descriptors.gdsc"))

    dets = {q.name: render_detections(scene, q.name)[0] for q in scene.queries}
    write_detections(dets, os.path.join(out_dir, "detections.json"))

    truth = {
        "zone": scene.zone, "hemisphere": scene.hemisphere,
        "queries": [{"name": q.name, "center": q.geopose.pose.center.tolist(),
                     "rotation": q.geopose.pose.rotation.tolist(),
                     "withheld": q.name in withheld} for q in scene.queries],
        "objects": [{"class": m.label, "position": m.position.tolist(), "radius": m.radius}
                    for m in scene.markers],
    }
    with open(os.path.join(out_dir, "ground_truth.json"), "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1)

    cfg = {
        "db_model": "db_model_local", "db_sidecar": "db_sidecar.csv", "cloud": "cloud.ply",
        "query_model": "query_model_local", "matches": "matches",
        "db_descriptors": "db_descriptors.gdsc", "query_descriptors": "query_descriptors.gdsc",
        "detections": "detections.json", "ground_truth": "ground_truth.json",
        "query_intrinsics": f"{k.fx!r},{k.fy!r},{k.cx!r},{k.cy!r},{k.width},{k.height}",
        "seed": str(opts.seed),
    }
    with open(os.path.join(out_dir, "mission.cfg"), "w", encoding="utf-8") as fh:
        fh.write("# synthetic mission; paths are relative to this file\n")
        for key, val in cfg.items():
            fh.write(f"{key} = {val}\n")
    return sorted(withheld)
