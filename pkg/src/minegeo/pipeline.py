"""Config-driven batch stages: localize, project, evaluate, align, tile, synth, export.

The config file is flat ``key = value`` text; ``#`` starts a comment and
relative paths resolve against the file's directory. Work is split per
image, each image seeded from (master seed, image name), and results are
gathered in name order, so outputs do not depend on the thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
import configparser
from dataclasses import dataclass, field, fields
import json
import logging
import math
import os

import numpy as np

from .alignment import (Trajectory, TrajectoryEntry, anchor_query_trajectory, geo_register_model,
                        read_trajectory_csv, write_trajectory_csv)
from .camera import GeoPose, Intrinsics, RigidPose
from . import dataset
from .errors import ConfigError, DegenerateConfigurationError, ParseError, ProcessingError, ValidationError, ZoneMismatchError
from .evaluation import QueryError, localization_report, map_suite, pose_errors, render_summary_table
from . import geodesy
from .io.ply import read_ply, write_ply
from .io.records import (Detection, export_geo_objects, read_detections, read_geo_objects_csv,
                         read_matches, read_pose_sidecar)
from .io.sparse import camera_intrinsics, read_sparse_model, write_sparse_model
from .pnp import MIN_POINTS, RansacParams, gather_correspondences, pnp_ransac
from .projection import GeoObject, localize_detections
from .retrieval import load_external_descriptors, query_top_k
from . import synthetic

log = logging.getLogger(__name__)

GEOREF_NAME = "georef.json"

PATH_KEYS = ("db_model", "db_sidecar", "cloud", "query_model", "matches", "db_descriptors",
             "query_descriptors", "detections", "ground_truth", "det_ground_truth", "trajectory",
             "manifest", "image_dir", "objects")


@dataclass
class PipelineConfig:
    # inputs
    db_model: str | None = None
    db_sidecar: str | None = None
    cloud: str | None = None
    query_model: str | None = None
    matches: str | None = None
    db_descriptors: str | None = None
    query_descriptors: str | None = None
    detections: str | None = None
    ground_truth: str | None = None
    det_ground_truth: str | None = None
    trajectory: str | None = None
    manifest: str | None = None
    image_dir: str | None = None
    objects: str | None = None
    query_intrinsics: str | None = None
    utm_zone: str | None = None
    out: str = "out"
    # processing
    seed: int = 0
    threads: int = 1
    retrieval_k: int = 5
    inlier_px: float = 4.0
    ransac_confidence: float = 0.999
    max_iters: int = 10000
    min_inliers: int = 12
    depth_band_m: float = 2.0
    forced_zone: int | None = None
    anchor_trim: bool = False
    anchor_with_scale: bool = True
    # dataset preparation
    tile_min_area: float = 0.10
    gray_fraction: float = 0.15
    split: str = "0.85,0.09,0.06"
    dry_run: bool = False
    # synthetic missions
    grid_nx: int = 224
    grid_ny: int = 224
    spacing: float = 1.0
    amplitude: float = 6.0
    n_db: int = 60
    n_query: int = 20
    n_objects: int = 10
    noise_px: float = 0.5
    outlier_fraction: float = 0.2
    withheld_fraction: float = 0.0
    query_model_noise_m: float = 0.0
    cloud_variant: str = "binary_le"
    # export
    export_format: str = "geojson"
    # eval loc formatting fixture: "mean_t,std_t,mean_r,std_r"
    summary: str | None = None

    @classmethod
    def from_file(cls, path=None, overrides=None, override_base=None):
        """Load a config file (optional) and apply ``key -> value`` overrides.

        File paths are relative to the file; override paths to ``override_base``
        (the working directory by default).
        """
        values = {}
        if path is not None:
            if not os.path.isfile(path):
                raise ConfigError(f"config file {path} not found")
            base = os.path.dirname(os.path.abspath(path))
            for key, val in _read_flat(path).items():
                values[key] = _resolve(key, val, base)
        base = override_base or os.getcwd()
        for key, val in (overrides or {}).items():
            values[key] = _resolve(key, str(val), base)
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values):
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            kw[key] = _coerce(key, kinds[key], raw)
        cfg = cls(**kw)
        cfg.check_ranges()
        return cfg

    def check_ranges(self):
        bad = []
        if self.threads < 1:
            bad.append("threads must be >= 1")
        if self.seed < 0:
            bad.append("seed must be >= 0")
        if self.retrieval_k < 0:
            bad.append("retrieval_k must be >= 0 (0 disables retrieval)")
        if not self.inlier_px > 0:
            bad.append("inlier_px must be > 0")
        if not 0 < self.ransac_confidence < 1:
            bad.append("ransac_confidence must be in (0, 1)")
        if self.max_iters < 1:
            bad.append("max_iters must be >= 1")
        if self.min_inliers < MIN_POINTS:
            bad.append(f"min_inliers must be >= {MIN_POINTS}")
        if not self.depth_band_m > 0:
            bad.append("depth_band_m must be > 0")
        if self.forced_zone is not None and not 1 <= self.forced_zone <= 60:
            bad.append("forced_zone must be in 1..60")
        if not 0 <= self.tile_min_area <= 1 or not 0 <= self.gray_fraction <= 1:
            bad.append("tile_min_area and gray_fraction must be in [0, 1]")
        if self.export_format not in ("geojson", "csv", "ply"):
            bad.append("export_format must be one of geojson/csv/ply")
        if self.cloud_variant not in ("ascii", "binary_le"):
            bad.append("cloud_variant must be ascii or binary_le")
        if bad:
            raise ConfigError("; ".join(bad))

    def require(self, *keys):
        """Every listed key is set and every set input path exists."""
        missing = [k for k in keys if getattr(self, k) in (None, "")]
        if missing:
            raise ConfigError(f"missing required config keys: {', '.join(missing)}")
        for k in PATH_KEYS:
            p = getattr(self, k)
            if p is not None and not os.path.exists(p):
                raise ConfigError(f"{k}: path {p} does not exist")

    def ransac_params(self, seed):
        return RansacParams(self.inlier_px, self.ransac_confidence, self.max_iters, self.min_inliers, seed)

    def split_ratios(self):
        try:
            r = tuple(float(v) for v in self.split.split(","))
        except ValueError:
            raise ConfigError(f"split: cannot parse {self.split!r}") from None
        if len(r) != 3:
            raise ConfigError("split needs three comma-separated ratios")
        return r

    def out_path(self, *parts):
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, *parts)


def _read_flat(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(cp["config"])


def _resolve(key, val, base):
    val = val.strip()
    if (key in PATH_KEYS or key == "out") and val and not os.path.isabs(val):
        return os.path.normpath(os.path.join(base, val))
    return val


def _coerce(key, kind, raw):
    kind = str(kind)
    if isinstance(raw, str):
        raw = raw.strip()
        if raw == "" and "None" in kind:
            return None
    try:
        if kind.startswith("bool"):
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.split()[0]}") from None
    return str(raw)


def _pmap(cfg, fn, items):
    items = list(items)
    if cfg.threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
        return list(ex.map(fn, items))


def _parse_zone(text):
    text = text.strip().upper()
    hemi = text[-1] if text[-1:] in ("N", "S") else "N"
    digits = text[:-1] if text[-1:] in ("N", "S") else text
    try:
        zone = int(digits)
    except ValueError:
        raise ConfigError(f"utm_zone: cannot parse {text!r}") from None
    if not 1 <= zone <= 60:
        raise ConfigError("utm_zone must be in 1..60")
    return zone, hemi


def _num(x):
    return None if x is None or not math.isfinite(x) else float(x)


# ------------------------------------------------------------------ inputs

def load_query_intrinsics(cfg: PipelineConfig) -> Intrinsics:
    """From ``query_intrinsics = fx,fy,cx,cy,width,height`` or the query model's single camera."""
    if cfg.query_intrinsics:
        parts = cfg.query_intrinsics.split(",")
        if len(parts) != 6:
            raise ConfigError("query_intrinsics needs fx,fy,cx,cy,width,height")
        try:
            v = [float(p) for p in parts[:4]]
            return Intrinsics(*v, int(parts[4]), int(parts[5]))
        except ValueError as exc:
            raise ConfigError(f"query_intrinsics: {exc}") from None
    if cfg.query_model:
        cams = read_sparse_model(cfg.query_model).cameras
        if len(cams) == 1:
            return camera_intrinsics(next(iter(cams.values())))
    raise ConfigError("set query_intrinsics (or supply a single-camera query_model)")


def load_utm_model(cfg: PipelineConfig):
    """Database model in UTM: as stored when it carries a georef file, else registered via the sidecar."""
    model = read_sparse_model(cfg.db_model)
    georef = os.path.join(cfg.db_model, GEOREF_NAME)
    if os.path.exists(georef):
        with open(georef, encoding="utf-8") as fh:
            try:
                meta = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(georef, exc.msg, line=exc.lineno, offset=exc.pos) from None
        if meta.get("frame") == "utm":
            return model, int(meta["zone"]), meta.get("hemisphere", "N")
    if not cfg.db_sidecar:
        raise ConfigError("db_model is in a local frame; set db_sidecar to geo-register it")
    reg = geo_register_model(model, read_pose_sidecar(cfg.db_sidecar), cfg.forced_zone, cfg.anchor_trim)
    log.info("geo-registered database model: scale %.6g, rms %.3g m", reg.transform.scale, reg.rms)
    return reg.model, reg.zone, reg.hemisphere


def load_match_files(directory):
    """``{query name: MatchFile}`` from every ``*.json`` in a directory."""
    out = {}
    for fn in sorted(os.listdir(directory)):
        if not fn.endswith(".json"):
            continue
        mf = read_matches(os.path.join(directory, fn))
        if mf.query in out:
            raise ValidationError(f"two match files for query {mf.query!r}")
        out[mf.query] = mf
    return out


def load_ground_truth_poses(path, forced_zone=None):
    """``{name: GeoPose}`` from a ground-truth JSON or a pose sidecar CSV."""
    if path.lower().endswith(".csv"):
        return {n: GeoPose.from_metadata(r.position, r.attitude, forced_zone)
                for n, r in read_pose_sidecar(path).items()}
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.msg, line=exc.lineno, offset=exc.pos) from None
    try:
        zone, hemi = int(doc["zone"]), doc.get("hemisphere", "N")
        return {q["name"]: GeoPose(RigidPose(q["rotation"], q["center"]), zone, hemi) for q in doc["queries"]}
    except (KeyError, TypeError) as exc:
        raise ParseError(path, f"malformed ground truth ({exc})") from None


# ---------------------------------------------------------------- localize

@dataclass
class QueryOutcome:
    name: str
    pose: RigidPose | None
    n_correspondences: int = 0
    n_inliers: int = 0
    rmse_px: float = math.inf
    retrieved: list = field(default_factory=list)
    reason: str = ""


@dataclass(eq=False)
class LocalizeResult:
    trajectory: Trajectory
    outcomes: list
    report: object = None
    anchor_scale: float | None = None


def register_query(name, match_file, model, k, cfg: PipelineConfig, db_index=None, query_index=None):
    """Retrieval top-k, correspondences, robust PnP. Never raises on a bad frame."""
    if match_file is None:
        return QueryOutcome(name, None, reason="no match file")
    restrict = None
    retrieved = []
    if db_index is not None and query_index is not None and cfg.retrieval_k > 0 and name in query_index:
        retrieved = [n for n, _ in query_top_k(db_index, query_index.get(name), cfg.retrieval_k)]
        restrict = set(retrieved)
    corrs = gather_correspondences(match_file.matches, model, restrict)
    n = len(corrs)
    if n < MIN_POINTS:
        return QueryOutcome(name, None, n, retrieved=retrieved, reason=f"{n} correspondences")
    try:
        res = pnp_ransac(corrs, k, cfg.ransac_params(synthetic.derive_seed(cfg.seed, name)))
    except DegenerateConfigurationError as exc:
        return QueryOutcome(name, None, n, retrieved=retrieved, reason=str(exc))
    if not res.success:
        return QueryOutcome(name, None, n, int(res.inliers.sum()), retrieved=retrieved, reason=res.reason)
    return QueryOutcome(name, res.pose, n, int(res.inliers.sum()), res.rmse, retrieved)


def run_localize(cfg: PipelineConfig) -> LocalizeResult:
    cfg.require("db_model", "matches")
    k = load_query_intrinsics(cfg)
    model, zone, hemi = load_utm_model(cfg)
    matches = load_match_files(cfg.matches)
    qmodel = read_sparse_model(cfg.query_model) if cfg.query_model else None
    db_index = load_external_descriptors(cfg.db_descriptors) if cfg.db_descriptors else None
    q_index = load_external_descriptors(cfg.query_descriptors) if cfg.query_descriptors else None

    names = set(matches)
    if qmodel is not None:
        names |= {im.name for im in qmodel.images.values()}
    if q_index is not None:
        names |= set(q_index.names)
    names = sorted(names)
    if not names:
        raise ConfigError("no query images found")

    outcomes = _pmap(cfg, lambda n: register_query(n, matches.get(n), model, k, cfg, db_index, q_index), names)
    registered = {o.name: o.pose for o in outcomes if o.pose is not None}
    log.info("registered %d/%d queries", len(registered), len(names))

    entries = {o.name: TrajectoryEntry(o.name, o.pose, registered=o.pose is not None) for o in outcomes}
    scale = None
    if qmodel is not None and len(registered) >= 3:
        ar = anchor_query_trajectory(Trajectory.from_model(qmodel), registered,
                                     cfg.anchor_with_scale, cfg.anchor_trim)
        if ar.success:
            scale = ar.transform.scale
            for e in ar.trajectory:
                if e.pose is not None and not e.registered:
                    entries[e.name] = TrajectoryEntry(e.name, e.pose, registered=False, anchored=True)
        else:
            log.warning("anchoring failed: %s", ar.reason)
    if not any(e.pose is not None for e in entries.values()):
        raise ProcessingError("no query could be registered and anchoring was not possible")

    traj = Trajectory([entries[n] for n in names], "utm", zone, hemi)
    write_trajectory_csv(traj, cfg.out_path("trajectory.csv"))
    summary = {
        "zone": zone, "hemisphere": hemi, "anchor_scale": scale,
        "queries": [{
            "name": o.name, "status": entries[o.name].status,
            "n_correspondences": o.n_correspondences, "n_inliers": o.n_inliers,
            "rmse_px": _num(o.rmse_px), "retrieved": o.retrieved, "reason": o.reason,
        } for o in outcomes],
    }
    with open(cfg.out_path("localization.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)

    report = None
    if cfg.ground_truth:
        report = evaluate_trajectory(traj, load_ground_truth_poses(cfg.ground_truth, cfg.forced_zone))
        write_localization_report(report, cfg)
    return LocalizeResult(traj, outcomes, report, scale)


# ---------------------------------------------------------------- project

def load_trajectory(cfg: PipelineConfig) -> Trajectory:
    path = cfg.trajectory or os.path.join(cfg.out, "trajectory.csv")
    if not os.path.exists(path):
        raise ConfigError(f"trajectory {path} not found; run localize first or set trajectory")
    if cfg.utm_zone:
        zone, hemi = _parse_zone(cfg.utm_zone)
    else:
        meta = os.path.join(os.path.dirname(path), "localization.json")
        if not os.path.exists(meta):
            raise ConfigError("set utm_zone (no localization.json next to the trajectory)")
        with open(meta, encoding="utf-8") as fh:
            doc = json.load(fh)
        zone, hemi = int(doc["zone"]), doc.get("hemisphere", "N")
    return read_trajectory_csv(path, zone, hemi)


@dataclass(eq=False)
class ProjectResult:
    objects: list
    unlocalized: list  # (image, box_index, Detection, reason)


def run_project(cfg: PipelineConfig) -> ProjectResult:
    cfg.require("cloud", "detections")
    traj = load_trajectory(cfg)
    k = load_query_intrinsics(cfg)
    cloud = read_ply(cfg.cloud)
    if cloud.frame != "utm" or (cloud.zone, cloud.hemisphere) != (traj.zone, traj.hemisphere):
        raise ZoneMismatchError(
            f"cloud frame {cloud.frame} {cloud.zone}{cloud.hemisphere} does not match "
            f"trajectory zone {traj.zone}{traj.hemisphere}"
        )
    dets = read_detections(cfg.detections)
    poses = {e.name: e.pose for e in traj if e.pose is not None}

    def one(name):
        if name not in poses:
            return [], [(name, i, d, "no pose") for i, d in enumerate(dets[name])]
        gp = GeoPose(poses[name], traj.zone, traj.hemisphere)
        objs, missed = localize_detections(dets[name], cloud, gp, k, name, cfg.depth_band_m)
        return objs, [(name, i, d, "no cloud points in box") for i, d in missed]

    objects, unlocalized = [], []
    for objs, missed in _pmap(cfg, one, sorted(dets)):
        objects += objs
        unlocalized += missed
    export_geo_objects(objects, cfg.out_path("objects.geojson"), "geojson", cfg.forced_zone)
    export_geo_objects(objects, cfg.out_path("objects.csv"), "csv", cfg.forced_zone)
    with open(cfg.out_path("unlocalized.json"), "w", encoding="utf-8") as fh:
        json.dump([{"image": n, "box_index": i, "class": d.label, "conf": d.confidence,
                    "box": list(d.box), "reason": r} for n, i, d, r in unlocalized], fh, indent=1)
    log.info("positioned %d detections, %d unlocalized", len(objects), len(unlocalized))
    return ProjectResult(objects, unlocalized)


# ------------------------------------------------------------------- eval

def evaluate_trajectory(traj: Trajectory, truth):
    """Per-query errors for every ground-truth image; missing or unposed ones count as failed."""
    by_name = {e.name: e for e in traj}
    rows = []
    for name in sorted(truth):
        e = by_name.get(name)
        if e is None or e.pose is None:
            rows.append(QueryError(name, None, None, "failed"))
            continue
        t, r = pose_errors(GeoPose(e.pose, traj.zone, traj.hemisphere), truth[name])
        rows.append(QueryError(name, t, r, e.status))
    return localization_report(rows)


def write_localization_report(report, cfg: PipelineConfig):
    report.to_json(cfg.out_path("loc_report.json"))
    with open(cfg.out_path("loc_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.render() + "\n")
    report.write_cdf_csv(cfg.out_path("cdf_translation.csv"), "translation")
    report.write_cdf_csv(cfg.out_path("cdf_orientation.csv"), "orientation")


def run_eval_loc(cfg: PipelineConfig):
    """Report for a trajectory against ground truth, or render given summary values."""
    if cfg.summary:
        try:
            vals = [float(v) for v in cfg.summary.split(",")]
        except ValueError:
            raise ConfigError(f"summary: cannot parse {cfg.summary!r}") from None
        if len(vals) != 4:
            raise ConfigError("summary needs mean_t,std_t,mean_r,std_r")
        text = render_summary_table(*vals)
        with open(cfg.out_path("loc_summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        return text
    cfg.require("ground_truth")
    traj = load_trajectory(cfg)
    report = evaluate_trajectory(traj, load_ground_truth_poses(cfg.ground_truth, cfg.forced_zone))
    write_localization_report(report, cfg)
    return report


def run_eval_det(cfg: PipelineConfig):
    cfg.require("det_ground_truth", "detections")
    gt = read_detections(cfg.det_ground_truth)
    preds = read_detections(cfg.detections)
    unknown = sorted(set(preds) - set(gt))
    if unknown:
        raise ValidationError(f"predictions for images without ground truth: {unknown[:5]}")
    report = map_suite(gt, preds)
    with open(cfg.out_path("det_report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1)
    with open(cfg.out_path("det_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.render() + "\n")
    with open(cfg.out_path("f1_curve.csv"), "w", encoding="utf-8") as fh:
        fh.write("threshold,mean_f1," + ",".join(report.classes) + "\n")
        for i, t in enumerate(report.thresholds):
            cols = [repr(float(t)), repr(float(report.mean_f1[i]))]
            cols += [repr(float(report.f1_curves[c][i])) for c in report.classes]
            fh.write(",".join(cols) + "\n")
    return report


# ------------------------------------------------------------ align-model

def run_align_model(cfg: PipelineConfig):
    """Geo-register the database model and write it (binary) with a georef file."""
    cfg.require("db_model", "db_sidecar")
    model = read_sparse_model(cfg.db_model)
    reg = geo_register_model(model, read_pose_sidecar(cfg.db_sidecar), cfg.forced_zone, cfg.anchor_trim)
    out_dir = cfg.out_path("model_utm")
    write_sparse_model(reg.model, out_dir, "binary")
    t = reg.transform
    meta = {
        "frame": "utm", "zone": reg.zone, "hemisphere": reg.hemisphere,
        "scale": t.scale, "rotation": t.rotation.tolist(), "translation": t.translation.tolist(),
        "rms_m": reg.rms, "residuals_m": {n: float(v) for n, v in reg.residuals.items()},
    }
    with open(os.path.join(out_dir, GEOREF_NAME), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
    return reg


# -------------------------------------------------------------------- tile

def read_manifest(path):
    """``[(name, width, height, [Annotation])]`` from a dataset manifest JSON."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.msg, line=exc.lineno, offset=exc.pos) from None
    out = []
    try:
        for i, im in enumerate(doc["images"]):
            anns = [dataset.Annotation(str(a["class"]), tuple(float(v) for v in a["box"]))
                    for a in im.get("annotations", [])]
            w, h = int(im["width"]), int(im["height"])
            for a in anns:
                x0, y0, x1, y1 = a.box
                if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
                    raise ParseError(path, f"images[{i}]: box {a.box} outside {w}x{h}")
            out.append((str(im["name"]), w, h, anns))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, f"malformed manifest ({exc})") from None
    return out


def _load_pixels(image_dir, name):
    from PIL import Image as PILImage

    p = os.path.join(image_dir, name)
    if not os.path.exists(p):
        raise ConfigError(f"image {p} listed in the manifest does not exist")
    with PILImage.open(p) as im:
        return np.asarray(im.convert("RGB"))


def run_tile(cfg: PipelineConfig):
    """Tile 2x2, grayscale a seeded fraction, rotate by random quarter turns, split.

    Writes ``tiles.json``; with ``image_dir`` set and ``dry_run`` off the tile
    pixels are also written as PNG under ``tiles/<split>/``.
    """
    cfg.require("manifest")
    ratios = cfg.split_ratios()
    items = read_manifest(cfg.manifest)
    tiles = []
    for name, w, h, anns in items:
        if w < 2 or h < 2:
            raise ValidationError(f"{name}: image too small to tile")
        stem = os.path.splitext(name)[0]
        for t, ((x0, y0, x1, y1), tanns) in enumerate(zip(dataset.tile_bounds(w, h),
                                                          dataset.tile_annotations(w, h, anns, cfg.tile_min_area))):
            tiles.append({"name": f"{stem}_t{t}.png", "source": name, "window": [x0, y0, x1, y1],
                          "width": x1 - x0, "height": y1 - y0, "annotations": tanns})
    gray = set(dataset.grayscale_selection(len(tiles), cfg.gray_fraction,
                                           synthetic.derive_seed(cfg.seed, "grayscale")).tolist())
    turns = np.random.default_rng(synthetic.derive_seed(cfg.seed, "rotate")).integers(0, 4, len(tiles))
    for i, tile in enumerate(tiles):
        tile["grayscale"] = i in gray
        tile["turns"] = int(turns[i])
        w, h = tile["width"], tile["height"]
        tile["annotations"] = [dataset.Annotation(a.label, dataset.rotate_box(a.box, w, h, tile["turns"]))
                               for a in tile["annotations"]]
        if tile["turns"] % 2:
            tile["width"], tile["height"] = h, w
    n_train, n_val, n_test = dataset.split_sizes(len(tiles), ratios)
    order = np.random.default_rng(synthetic.derive_seed(cfg.seed, "split")).permutation(len(tiles))
    labels = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    for pos, i in enumerate(order):
        tiles[i]["split"] = labels[pos]

    if cfg.image_dir and not cfg.dry_run:
        cache = {}
        from PIL import Image as PILImage

        for tile in tiles:
            src = tile["source"]
            if src not in cache:
                cache.clear()
                cache[src] = _load_pixels(cfg.image_dir, src)
            x0, y0, x1, y1 = tile["window"]
            px = cache[src][y0:y1, x0:x1]
            if tile["grayscale"]:
                px = dataset.to_grayscale(px)
            px = np.ascontiguousarray(np.rot90(px, tile["turns"]))
            d = cfg.out_path("tiles", tile["split"])
            os.makedirs(d, exist_ok=True)
            PILImage.fromarray(px).save(os.path.join(d, tile["name"]))

    doc = {
        "counts": {"sources": len(items), "tiles": len(tiles), "train": n_train, "val": n_val, "test": n_test},
        "tiles": [dict(t, annotations=[{"class": a.label, "box": list(a.box)} for a in t["annotations"]])
                  for t in tiles],
    }
    with open(cfg.out_path("tiles.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    return doc["counts"]


# ------------------------------------------------------------------- synth

def run_synth(cfg: PipelineConfig):
    """Write a synthetic mission (with its own ``mission.cfg``) into ``out``."""
    params = synthetic.SceneParams(cfg.grid_nx, cfg.grid_ny, cfg.spacing, cfg.amplitude,
                                   cfg.n_db, cfg.n_query, cfg.n_objects, cfg.seed)
    opts = synthetic.MissionOptions(cfg.noise_px, cfg.outlier_fraction, cfg.withheld_fraction,
                                    cfg.query_model_noise_m, cfg.seed, cfg.cloud_variant)
    try:
        params.validate()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 <= cfg.withheld_fraction <= 1 or not 0 <= cfg.outlier_fraction < 1:
        raise ConfigError("withheld_fraction must be in [0, 1] and outlier_fraction in [0, 1)")
    os.makedirs(cfg.out, exist_ok=True)
    scene = synthetic.generate_scene(params)
    withheld = synthetic.write_mission(scene, cfg.out, opts)
    return scene, withheld


# ------------------------------------------------------------------ export

def run_export(cfg: PipelineConfig):
    """Re-export positioned objects (or the cloud, for ``ply``) in the requested format."""
    if cfg.export_format == "ply":
        cfg.require("cloud")
        cloud = read_ply(cfg.cloud)
        path = cfg.out_path("cloud_export.ply")
        write_ply(cloud, path, cfg.cloud_variant)
        return path
    src = cfg.objects or os.path.join(cfg.out, "objects.csv")
    if not os.path.exists(src):
        raise ConfigError(f"objects {src} not found; run project first or set objects")
    objects = []
    for i, row in enumerate(read_geo_objects_csv(src)):
        pos = geodesy.UtmCoord(row["easting"], row["northing"], row["up"], row["zone"], row["hemisphere"])
        objects.append(GeoObject(row["class"], row["conf"], pos, 0, row["source_image"], (), i))
    ext = "geojson" if cfg.export_format == "geojson" else "csv"
    path = cfg.out_path(f"export.{ext}")
    export_geo_objects(objects, path, cfg.export_format, cfg.forced_zone)
    return path
