"""Small tabular/JSON interchange formats.

* pose sidecar CSV (per-image GNSS position, NED attitude, intrinsics)
* detections JSON (per-image class-labelled boxes)
* match files JSON (query keypoint -> database keypoint)
* geo-object export (GeoJSON / CSV) and trajectory CSV
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
import json
import math

from ..camera import Intrinsics
from ..errors import ParseError, ValidationError, ZoneMismatchError
from .. import geodesy

SITE_CLASSES = ("bulldozer", "car", "driller", "dump truck", "excavator", "grader", "human", "truck")

SIDECAR_HEADER = ["image", "lat_deg", "lon_deg", "alt_m", "roll_deg", "pitch_deg", "yaw_deg",
                  "fx", "fy", "cx", "cy", "width", "height"]
GEO_CSV_HEADER = ["class", "conf", "lat", "lon", "easting", "northing", "up", "zone", "source_image"]
TRAJECTORY_HEADER = ["image", "easting", "northing", "up", "qw", "qx", "qy", "qz", "registered", "anchored"]


@dataclass(frozen=True)
class SidecarRecord:
    image: str
    position: geodesy.GeoPosition
    attitude: geodesy.EulerNed
    intrinsics: Intrinsics


@dataclass(frozen=True)
class Detection:
    label: str
    confidence: float
    box: tuple

    def __post_init__(self):
        box = tuple(float(v) for v in self.box)
        if len(box) != 4 or not all(math.isfinite(v) for v in box):
            raise ValidationError(f"box must be four finite numbers, got {self.box!r}")
        if not (box[0] < box[2] and box[1] < box[3]):
            raise ValidationError(f"inverted or empty box {box}")
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "confidence", float(self.confidence))


@dataclass(frozen=True)
class Match:
    db_image: str
    query_px: tuple
    db_keypoint: int


@dataclass
class MatchFile:
    query: str
    matches: list = field(default_factory=list)


# ------------------------------------------------------------ pose sidecar

def read_pose_sidecar(path):
    """Return an ordered ``{image name: SidecarRecord}``."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != SIDECAR_HEADER:
            raise ParseError(path, f"expected header {','.join(SIDECAR_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(SIDECAR_HEADER):
                raise ParseError(path, f"expected {len(SIDECAR_HEADER)} fields, got {len(row)}", line=lineno)
            name = row[0].strip()
            if name in out:
                raise ParseError(path, f"duplicate image name {name!r}", line=lineno)
            try:
                v = [float(c) for c in row[1:11]]
                w, h = int(row[11]), int(row[12])
                rec = SidecarRecord(
                    name,
                    geodesy.GeoPosition(v[0], v[1], v[2]),
                    geodesy.EulerNed(v[3], v[4], v[5]),
                    Intrinsics(v[6], v[7], v[8], v[9], w, h),
                )
            except ValueError as exc:
                raise ParseError(path, str(exc), line=lineno) from None
            out[name] = rec
    return out


def write_pose_sidecar(records, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIDECAR_HEADER)
        for r in records:
            p, e, k = r.position, r.attitude, r.intrinsics
            w.writerow([r.image, repr(p.latitude), repr(p.longitude), repr(p.altitude),
                        repr(e.roll), repr(e.pitch), repr(e.yaw),
                        repr(k.fx), repr(k.fy), repr(k.cx), repr(k.cy), k.width, k.height])


# -------------------------------------------------------------- detections

def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(path, f"invalid JSON: {exc.msg}", line=exc.lineno, offset=exc.pos) from None


def read_detections(path):
    """Return an ordered ``{image name: [Detection, ...]}``."""
    doc = _load_json(path)
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise ParseError(path, "expected an object with an 'images' list")
    out = {}
    for i, entry in enumerate(doc["images"]):
        try:
            name = entry["name"]
            if name in out:
                raise ValidationError(f"duplicate image name {name!r}")
            dets = [Detection(str(d["class"]), d["conf"], tuple(d["box"])) for d in entry["detections"]]
        except (KeyError, TypeError) as exc:
            raise ParseError(path, f"images[{i}]: missing or malformed field ({exc})") from None
        except ValidationError as exc:
            raise ParseError(path, f"images[{i}]: {exc}") from None
        out[name] = dets
    return out


def write_detections(detections, path):
    doc = {"images": [
        {"name": name, "detections": [
            {"class": d.label, "conf": d.confidence, "box": list(d.box)} for d in dets
        ]}
        for name, dets in detections.items()
    ]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


# ----------------------------------------------------------------- matches

def read_matches(path) -> MatchFile:
    doc = _load_json(path)
    if not isinstance(doc, dict) or "query" not in doc or not isinstance(doc.get("matches"), list):
        raise ParseError(path, "expected an object with 'query' and a 'matches' list")
    mf = MatchFile(str(doc["query"]))
    for i, m in enumerate(doc["matches"]):
        try:
            u, v = m["query_px"]
            mf.matches.append(Match(str(m["db_image"]), (float(u), float(v)), int(m["db_keypoint"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(path, f"matches[{i}]: missing or malformed field ({exc})") from None
    return mf


def write_matches(mf: MatchFile, path):
    doc = {"query": mf.query, "matches": [
        {"db_image": m.db_image, "query_px": list(m.query_px), "db_keypoint": m.db_keypoint}
        for m in mf.matches
    ]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


# ------------------------------------------------------------------ export

def _export_rows(objects, forced_zone=None):
    zones = {(o.position.zone, o.position.hemisphere) for o in objects}
    if len(zones) > 1 and forced_zone is None:
        raise ZoneMismatchError(f"objects span UTM zones {sorted(zones)}; pass forced_zone")
    rows = []
    for o in sorted(objects, key=lambda o: (o.source_image, o.box_index)):
        pos = o.position
        geo = geodesy.utm_to_wgs84(pos)
        if forced_zone is not None and pos.zone != forced_zone:
            pos = geodesy.wgs84_to_utm(geo, forced_zone)
        rows.append((o, geo, pos))
    return rows


def export_geo_objects(objects, path, format="geojson", forced_zone=None):
    rows = _export_rows(objects, forced_zone)
    if format == "geojson":
        features = [{
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [geo.longitude, geo.latitude]},
            "properties": {
                "class": o.label, "confidence": o.confidence,
                "easting": pos.easting, "northing": pos.northing, "up": pos.up,
                "zone": pos.zone, "hemisphere": pos.hemisphere,
                "source_image": o.source_image, "support": o.support,
            },
        } for o, geo, pos in rows]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1)
    elif format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GEO_CSV_HEADER)
            for o, geo, pos in rows:
                w.writerow([o.label, repr(o.confidence), repr(geo.latitude), repr(geo.longitude),
                            repr(pos.easting), repr(pos.northing), repr(pos.up),
                            f"{pos.zone}{pos.hemisphere}", o.source_image])
    else:
        raise ValueError(f"unknown export format {format!r}")


def read_geo_objects_csv(path):
    """Rows of an exported object CSV as dicts (numeric fields parsed)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != GEO_CSV_HEADER:
            raise ParseError(path, f"expected header {','.join(GEO_CSV_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                for key in ("conf", "lat", "lon", "easting", "northing", "up"):
                    row[key] = float(row[key])
                row["hemisphere"] = row["zone"][-1]
                row["zone"] = int(row["zone"][:-1])
            except (ValueError, IndexError) as exc:
                raise ParseError(path, str(exc), line=lineno) from None
            out.append(row)
    return out
