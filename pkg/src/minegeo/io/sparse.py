"""Reader/writer for the sparse reconstruction layout used by COLMAP.

Three files per model (``cameras``, ``images``, ``points3D``), either ``.txt``
or little-endian ``.bin``. Only pinhole-equivalent camera records are
accepted: PINHOLE, SIMPLE_PINHOLE, and the radial/OpenCV records when every
distortion coefficient is exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import io
import os
import struct

import numpy as np
from scipy.spatial.transform import Rotation

from ..camera import Intrinsics, RigidPose
from ..errors import ParseError, ValidationError

# model id -> (name, param count, number of leading non-distortion params)
CAMERA_MODELS = {
    0: ("SIMPLE_PINHOLE", 3, 3),
    1: ("PINHOLE", 4, 4),
    2: ("SIMPLE_RADIAL", 4, 3),
    3: ("RADIAL", 5, 3),
    4: ("OPENCV", 8, 4),
    5: ("OPENCV_FISHEYE", 8, None),
    6: ("FULL_OPENCV", 12, 4),
    7: ("FOV", 5, None),
    8: ("SIMPLE_RADIAL_FISHEYE", 4, None),
    9: ("RADIAL_FISHEYE", 5, None),
    10: ("THIN_PRISM_FISHEYE", 12, None),
}
CAMERA_MODEL_IDS = {name: mid for mid, (name, _, _) in CAMERA_MODELS.items()}


@dataclass
class Camera:
    id: int
    model: str
    width: int
    height: int
    params: tuple

    @property
    def intrinsics(self) -> Intrinsics:
        return camera_intrinsics(self)


@dataclass
class Image:
    id: int
    name: str
    qvec: np.ndarray  # (w, x, y, z), world-to-camera
    tvec: np.ndarray
    camera_id: int
    xys: np.ndarray  # (N, 2) float64
    point3d_ids: np.ndarray  # (N,) int64, -1 when untriangulated

    @property
    def rotation(self):
        return Rotation.from_quat(self.qvec, scalar_first=True).as_matrix()

    @property
    def pose(self) -> RigidPose:
        return RigidPose.from_rt(self.rotation, self.tvec)

    @property
    def center(self):
        return -self.rotation.T @ self.tvec


@dataclass
class Point3D:
    id: int
    xyz: np.ndarray
    rgb: np.ndarray  # uint8 (3,)
    error: float
    image_ids: np.ndarray  # int32
    point2d_idxs: np.ndarray  # int32


@dataclass
class SparseModel:
    cameras: dict = field(default_factory=dict)
    images: dict = field(default_factory=dict)
    points3d: dict = field(default_factory=dict)

    def image_by_name(self, name) -> Image:
        for im in self.images.values():
            if im.name == name:
                return im
        raise KeyError(name)

    def name_index(self):
        return {im.name: im for im in self.images.values()}

    def intrinsics(self, image: Image) -> Intrinsics:
        return self.cameras[image.camera_id].intrinsics


def camera_intrinsics(cam: Camera) -> Intrinsics:
    try:
        mid = CAMERA_MODEL_IDS[cam.model]
    except KeyError:
        raise ValidationError(f"camera {cam.id}: unknown camera model {cam.model}") from None
    _, n_params, n_core = CAMERA_MODELS[mid]
    p = cam.params
    if len(p) != n_params:
        raise ValidationError(f"camera {cam.id}: {cam.model} expects {n_params} params, got {len(p)}")
    if n_core is None or any(v != 0.0 for v in p[n_core:]):
        raise ValidationError(
            f"camera {cam.id}: model {cam.model} with distortion is not supported (pinhole only)"
        )
    if n_core == 3:
        f, cx, cy = p[:3]
        return Intrinsics(f, f, cx, cy, cam.width, cam.height)
    fx, fy, cx, cy = p[:4]
    return Intrinsics(fx, fy, cx, cy, cam.width, cam.height)


def pose_to_qt(pose: RigidPose):
    q = Rotation.from_matrix(pose.rotation).as_quat(scalar_first=True)
    if q[0] < 0:
        q = -q
    return q, pose.translation


def validate_model(model: SparseModel, path="<model>"):
    for cam in model.cameras.values():
        try:
            camera_intrinsics(cam)
        except ValidationError as exc:
            raise ParseError(os.path.join(str(path), "cameras"), str(exc)) from None
    for im in model.images.values():
        if im.camera_id not in model.cameras:
            raise ParseError(path, f"image {im.id} references missing camera {im.camera_id}")
        if abs(np.linalg.norm(im.qvec) - 1.0) > 1e-6:
            raise ParseError(path, f"image {im.id} quaternion is not unit norm")
        for idx, pid in enumerate(im.point3d_ids):
            if pid == -1:
                continue
            pt = model.points3d.get(int(pid))
            if pt is None:
                raise ParseError(path, f"image {im.id} keypoint {idx} references missing point {pid}")
            if not np.any((pt.image_ids == im.id) & (pt.point2d_idxs == idx)):
                raise ParseError(path, f"point {pid} track does not list image {im.id} keypoint {idx}")
    for pt in model.points3d.values():
        for iid, idx in zip(pt.image_ids, pt.point2d_idxs):
            im = model.images.get(int(iid))
            if im is None:
                raise ParseError(path, f"point {pt.id} track references missing image {iid}")
            if not 0 <= idx < len(im.point3d_ids) or im.point3d_ids[idx] != pt.id:
                raise ParseError(path, f"point {pt.id} track entry ({iid}, {idx}) is not reciprocated")


# ------------------------------------------------------------------ text

def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line.startswith("#"):
                continue
            yield lineno, line


def _read_cameras_text(path):
    cameras = {}
    for lineno, line in _data_lines(path):
        if not line:
            continue
        tok = line.split()
        try:
            cam = Camera(int(tok[0]), tok[1], int(tok[2]), int(tok[3]), tuple(float(t) for t in tok[4:]))
        except (IndexError, ValueError) as exc:
            raise ParseError(path, f"malformed camera record ({exc})", line=lineno) from None
        if cam.model not in CAMERA_MODEL_IDS:
            raise ParseError(path, f"unknown camera model {cam.model}", line=lineno)
        try:
            camera_intrinsics(cam)
        except ValidationError as exc:
            raise ParseError(path, str(exc), line=lineno) from None
        cameras[cam.id] = cam
    return cameras


def _read_images_text(path):
    images = {}
    lines = [(n, l) for n, l in _data_lines(path)]
    i = 0
    while i < len(lines):
        lineno, line = lines[i]
        if not line:
            i += 1
            continue
        tok = line.split()
        try:
            iid = int(tok[0])
            qvec = np.array([float(t) for t in tok[1:5]])
            tvec = np.array([float(t) for t in tok[5:8]])
            cam_id = int(tok[8])
            name = " ".join(tok[9:])
            if len(qvec) != 4 or len(tvec) != 3 or not name:
                raise ValueError("expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME")
        except (IndexError, ValueError) as exc:
            raise ParseError(path, f"malformed image record ({exc})", line=lineno) from None
        if i + 1 < len(lines):
            lineno2, pts_line = lines[i + 1]
        else:
            lineno2, pts_line = lineno + 1, ""
        tok = pts_line.split()
        if len(tok) % 3:
            raise ParseError(path, "keypoint line must hold X Y POINT3D_ID triples", line=lineno2)
        try:
            xs = np.array([float(t) for t in tok[0::3]], dtype=float)
            ys = np.array([float(t) for t in tok[1::3]], dtype=float)
            ids = np.array([int(t) for t in tok[2::3]], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(path, f"malformed keypoint ({exc})", line=lineno2) from None
        images[iid] = Image(iid, name, qvec, tvec, cam_id, np.stack([xs, ys], axis=1).reshape(-1, 2), ids)
        i += 2
    return images


def _read_points_text(path):
    points = {}
    for lineno, line in _data_lines(path):
        if not line:
            continue
        tok = line.split()
        try:
            pid = int(tok[0])
            xyz = np.array([float(t) for t in tok[1:4]])
            rgb = np.array([int(t) for t in tok[4:7]], dtype=np.uint8)
            err = float(tok[7])
            track = tok[8:]
            if len(xyz) != 3 or len(rgb) != 3 or len(track) % 2:
                raise ValueError("expected POINT3D_ID X Y Z R G B ERROR (IMAGE_ID POINT2D_IDX)*")
            image_ids = np.array([int(t) for t in track[0::2]], dtype=np.int32)
            idxs = np.array([int(t) for t in track[1::2]], dtype=np.int32)
        except (IndexError, ValueError) as exc:
            raise ParseError(path, f"malformed point record ({exc})", line=lineno) from None
        points[pid] = Point3D(pid, xyz, rgb, err, image_ids, idxs)
    return points


def _fmt(x):
    return repr(float(x))


def _write_text(model: SparseModel, path):
    with open(os.path.join(path, "cameras.txt"), "w", encoding="utf-8") as fh:
        fh.write("# Camera list with one line of data per camera:\n")
        fh.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        fh.write(f"# Number of cameras: {len(model.cameras)}\n")
        for cam in model.cameras.values():
            params = " ".join(_fmt(p) for p in cam.params)
            fh.write(f"{cam.id} {cam.model} {cam.width} {cam.height} {params}\n")
    with open(os.path.join(path, "images.txt"), "w", encoding="utf-8") as fh:
        fh.write("# Image list with two lines of data per image:\n")
        fh.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        fh.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        fh.write(f"# Number of images: {len(model.images)}\n")
        for im in model.images.values():
            q = " ".join(_fmt(v) for v in im.qvec)
            t = " ".join(_fmt(v) for v in im.tvec)
            fh.write(f"{im.id} {q} {t} {im.camera_id} {im.name}\n")
            fh.write(" ".join(
                f"{_fmt(x)} {_fmt(y)} {int(pid)}" for (x, y), pid in zip(im.xys, im.point3d_ids)
            ))
            fh.write("\n")
    with open(os.path.join(path, "points3D.txt"), "w", encoding="utf-8") as fh:
        fh.write("# 3D point list with one line of data per point:\n")
        fh.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        fh.write(f"# Number of points: {len(model.points3d)}\n")
        for pt in model.points3d.values():
            xyz = " ".join(_fmt(v) for v in pt.xyz)
            rgb = " ".join(str(int(v)) for v in pt.rgb)
            track = " ".join(f"{int(i)} {int(j)}" for i, j in zip(pt.image_ids, pt.point2d_idxs))
            fh.write(f"{pt.id} {xyz} {rgb} {_fmt(pt.error)} {track}".rstrip() + "\n")


# ---------------------------------------------------------------- binary

class _Reader:
    def __init__(self, path):
        self.path = path
        with open(path, "rb") as fh:
            self.buf = fh.read()
        self.pos = 0

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise ParseError(self.path, f"unexpected end of file reading {size} bytes", offset=self.pos)
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        size = dtype.itemsize * count
        if self.pos + size > len(self.buf):
            raise ParseError(self.path, f"unexpected end of file reading {size} bytes", offset=self.pos)
        out = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.pos).copy()
        self.pos += size
        return out

    def cstring(self):
        end = self.buf.find(b"\x00", self.pos)
        if end < 0:
            raise ParseError(self.path, "unterminated image name", offset=self.pos)
        raw = self.buf[self.pos:end]
        start = self.pos
        self.pos = end + 1
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError(self.path, "image name is not valid UTF-8", offset=start) from None

    def finish(self):
        if self.pos != len(self.buf):
            raise ParseError(self.path, "trailing bytes after last record", offset=self.pos)


def _read_cameras_bin(path):
    r = _Reader(path)
    (n,) = r.unpack("<Q")
    cameras = {}
    for _ in range(n):
        start = r.pos
        cid, mid, w, h = r.unpack("<iiQQ")
        if mid not in CAMERA_MODELS:
            raise ParseError(path, f"unknown camera model id {mid}", offset=start)
        name, n_params, _ = CAMERA_MODELS[mid]
        params = r.unpack(f"<{n_params}d")
        cam = Camera(cid, name, w, h, tuple(params))
        try:
            camera_intrinsics(cam)
        except ValidationError as exc:
            raise ParseError(path, str(exc), offset=start) from None
        cameras[cid] = cam
    r.finish()
    return cameras


_KP_DTYPE = np.dtype([("x", "<f8"), ("y", "<f8"), ("id", "<i8")])
_TRACK_DTYPE = np.dtype([("image", "<i4"), ("idx", "<i4")])


def _read_images_bin(path):
    r = _Reader(path)
    (n,) = r.unpack("<Q")
    images = {}
    for _ in range(n):
        iid, qw, qx, qy, qz, tx, ty, tz, cid = r.unpack("<i7di")
        name = r.cstring()
        (n_pts,) = r.unpack("<Q")
        kp = r.array(_KP_DTYPE, n_pts)
        xys = np.stack([kp["x"], kp["y"]], axis=1).astype(float)
        images[iid] = Image(iid, name, np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]), cid,
                            xys, kp["id"].astype(np.int64))
    r.finish()
    return images


def _read_points_bin(path):
    r = _Reader(path)
    (n,) = r.unpack("<Q")
    points = {}
    for _ in range(n):
        vals = r.unpack("<Q3d3Bd")
        (track_len,) = r.unpack("<Q")
        track = r.array(_TRACK_DTYPE, track_len)
        pid = vals[0]
        points[pid] = Point3D(pid, np.array(vals[1:4]), np.array(vals[4:7], dtype=np.uint8), vals[7],
                              track["image"].astype(np.int32), track["idx"].astype(np.int32))
    r.finish()
    return points


def _write_bin(model: SparseModel, path):
    buf = io.BytesIO()
    buf.write(struct.pack("<Q", len(model.cameras)))
    for cam in model.cameras.values():
        mid = CAMERA_MODEL_IDS[cam.model]
        buf.write(struct.pack("<iiQQ", cam.id, mid, cam.width, cam.height))
        buf.write(struct.pack(f"<{len(cam.params)}d", *cam.params))
    with open(os.path.join(path, "cameras.bin"), "wb") as fh:
        fh.write(buf.getvalue())

    buf = io.BytesIO()
    buf.write(struct.pack("<Q", len(model.images)))
    for im in model.images.values():
        buf.write(struct.pack("<i7di", im.id, *im.qvec, *im.tvec, im.camera_id))
        buf.write(im.name.encode("utf-8") + b"\x00")
        kp = np.empty(len(im.point3d_ids), dtype=_KP_DTYPE)
        kp["x"], kp["y"], kp["id"] = im.xys[:, 0], im.xys[:, 1], im.point3d_ids
        buf.write(struct.pack("<Q", len(kp)))
        buf.write(kp.tobytes())
    with open(os.path.join(path, "images.bin"), "wb") as fh:
        fh.write(buf.getvalue())

    buf = io.BytesIO()
    buf.write(struct.pack("<Q", len(model.points3d)))
    for pt in model.points3d.values():
        buf.write(struct.pack("<Q3d3Bd", pt.id, *pt.xyz, *(int(c) for c in pt.rgb), pt.error))
        track = np.empty(len(pt.image_ids), dtype=_TRACK_DTYPE)
        track["image"], track["idx"] = pt.image_ids, pt.point2d_idxs
        buf.write(struct.pack("<Q", len(track)))
        buf.write(track.tobytes())
    with open(os.path.join(path, "points3D.bin"), "wb") as fh:
        fh.write(buf.getvalue())


_NAMES = ("cameras", "images", "points3D")


def detect_variant(path):
    for ext in ("bin", "txt"):
        if all(os.path.exists(os.path.join(path, f"{n}.{ext}")) for n in _NAMES):
            return "binary" if ext == "bin" else "text"
    missing = [f"{n}.{{bin,txt}}" for n in _NAMES]
    raise ParseError(path, f"no complete sparse model found (need {', '.join(missing)})")


def read_sparse_model(path, variant="auto") -> SparseModel:
    path = str(path)
    if variant == "auto":
        variant = detect_variant(path)
    ext = {"binary": "bin", "text": "txt"}.get(variant)
    if ext is None:
        raise ValueError(f"unknown variant {variant!r}")
    files = {n: os.path.join(path, f"{n}.{ext}") for n in _NAMES}
    for f in files.values():
        if not os.path.exists(f):
            raise ParseError(f, "missing model file")
    if ext == "bin":
        model = SparseModel(_read_cameras_bin(files["cameras"]), _read_images_bin(files["images"]),
                            _read_points_bin(files["points3D"]))
    else:
        model = SparseModel(_read_cameras_text(files["cameras"]), _read_images_text(files["images"]),
                            _read_points_text(files["points3D"]))
    validate_model(model, path)
    return model


def write_sparse_model(model: SparseModel, path, variant="binary"):
    os.makedirs(path, exist_ok=True)
    if variant == "binary":
        _write_bin(model, path)
    elif variant == "text":
        _write_text(model, path)
    else:
        raise ValueError(f"unknown variant {variant!r}")


def models_equal(a: SparseModel, b: SparseModel):
    """Semantic equality: same ids and values in the same order."""
    if list(a.cameras) != list(b.cameras) or list(a.images) != list(b.images):
        return False
    if list(a.points3d) != list(b.points3d):
        return False
    for k, ca in a.cameras.items():
        cb = b.cameras[k]
        if (ca.model, ca.width, ca.height, tuple(ca.params)) != (cb.model, cb.width, cb.height, tuple(cb.params)):
            return False
    for k, ia in a.images.items():
        ib = b.images[k]
        if ia.name != ib.name or ia.camera_id != ib.camera_id:
            return False
        for x, y in ((ia.qvec, ib.qvec), (ia.tvec, ib.tvec), (ia.xys, ib.xys), (ia.point3d_ids, ib.point3d_ids)):
            if not np.array_equal(x, y):
                return False
    for k, pa in a.points3d.items():
        pb = b.points3d[k]
        if pa.error != pb.error:
            return False
        for x, y in ((pa.xyz, pb.xyz), (pa.rgb, pb.rgb), (pa.image_ids, pb.image_ids),
                     (pa.point2d_idxs, pb.point2d_idxs)):
            if not np.array_equal(x, y):
                return False
    return True
