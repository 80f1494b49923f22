"""PLY point clouds (ascii and binary_little_endian 1.0).

Only a ``vertex`` element with float/double ``x y z`` and optional uchar
``red green blue`` is supported. The coordinate frame travels in a header
comment: ``comment frame utm 34 N`` or ``comment frame local``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParseError, ValidationError

_FLOAT_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8"}
_UCHAR_TYPES = {"uchar", "uint8"}


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None
    frame: str = "local"
    zone: int | None = None
    hemisphere: str = "N"
    precision: str = "double"  # storage type used when writing

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise ValidationError("color count does not match point count")
        if not np.all(np.isfinite(self.points)):
            raise ValidationError("point cloud contains non-finite coordinates")
        if self.frame not in ("local", "utm"):
            raise ValidationError(f"unknown frame tag {self.frame!r}")
        if self.frame == "utm" and self.zone is None:
            raise ValidationError("utm frame requires a zone")

    def __len__(self):
        return len(self.points)


def _parse_header(path, raw):
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError(path, "not a PLY file (missing 'ply' magic or end_header)", offset=0)
    nl = raw.find(b"\n", end)
    body_start = len(raw) if nl < 0 else nl + 1
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    count = None
    props = []
    frame = ("local", None, "N")
    in_vertex = False
    for lineno, line in enumerate(lines, start=1):
        tok = line.split()
        if not tok or tok[0] == "ply":
            continue
        if tok[0] == "format":
            if len(tok) != 3 or tok[2] != "1.0" or tok[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(path, f"unsupported format line {line!r}", line=lineno)
            fmt = tok[1]
        elif tok[0] == "comment":
            if len(tok) >= 3 and tok[1] == "frame":
                if tok[2] == "utm" and len(tok) == 5 and tok[3].isdigit() and tok[4] in ("N", "S"):
                    frame = ("utm", int(tok[3]), tok[4])
                elif tok[2] == "local":
                    frame = ("local", None, "N")
                else:
                    raise ParseError(path, f"bad frame comment {line!r}", line=lineno)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError(path, f"bad element line {line!r}", line=lineno)
            in_vertex = tok[1] == "vertex"
            if not in_vertex:
                raise ParseError(path, f"unsupported element {tok[1]!r}", line=lineno)
            try:
                count = int(tok[2])
            except ValueError:
                raise ParseError(path, f"bad element count {tok[2]!r}", line=lineno) from None
        elif tok[0] == "property":
            if not in_vertex or len(tok) != 3:
                raise ParseError(path, f"unsupported property line {line!r}", line=lineno)
            ptype, pname = tok[1], tok[2]
            if pname in ("x", "y", "z") and ptype in _FLOAT_TYPES:
                props.append((pname, _FLOAT_TYPES[ptype]))
            elif pname in ("red", "green", "blue") and ptype in _UCHAR_TYPES:
                props.append((pname, "u1"))
            else:
                raise ParseError(path, f"unsupported property {ptype} {pname}", line=lineno)
        elif tok[0] == "obj_info":
            continue
        else:
            raise ParseError(path, f"unknown header keyword {tok[0]!r}", line=lineno)
    if fmt is None or count is None:
        raise ParseError(path, "header lacks format or vertex element")
    names = [p[0] for p in props]
    if names[:3] != ["x", "y", "z"] or names[3:] not in ([], ["red", "green", "blue"]):
        raise ParseError(path, f"vertex properties must be x y z [red green blue], got {names}")
    if len({p[1] for p in props[:3]}) != 1:
        raise ParseError(path, "x, y, z must share one storage type")
    return fmt, count, props, frame, body_start


def read_ply(path) -> PointCloud:
    with open(path, "rb") as fh:
        raw = fh.read()
    fmt, count, props, frame, body_start = _parse_header(path, raw)
    has_rgb = len(props) == 6
    precision = "float" if props[0][1] == "<f4" else "double"
    if fmt == "binary_little_endian":
        dtype = np.dtype(props)
        need = dtype.itemsize * count
        have = len(raw) - body_start
        if have != need:
            raise ParseError(path, f"vertex data holds {have} bytes, header declares {need}",
                             offset=body_start + min(have, need))
        data = np.frombuffer(raw, dtype=dtype, count=count, offset=body_start)
        pts = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(float)
        rgb = np.stack([data["red"], data["green"], data["blue"]], axis=1) if has_rgb else None
    else:
        text = raw[body_start:].decode("ascii", errors="replace")
        rows = [r for r in text.splitlines() if r.strip()]
        header_lines = raw[:body_start].count(b"\n")
        if len(rows) != count:
            raise ParseError(path, f"body has {len(rows)} vertex rows, header declares {count}",
                             line=header_lines + min(len(rows), count) + 1)
        pts = np.empty((count, 3))
        rgb = np.empty((count, 3), dtype=np.uint8) if has_rgb else None
        for i, row in enumerate(rows):
            tok = row.split()
            try:
                if len(tok) != len(props):
                    raise ValueError(f"expected {len(props)} values")
                pts[i] = [float(t) for t in tok[:3]]
                if has_rgb:
                    c = [int(t) for t in tok[3:]]
                    if any(not 0 <= v <= 255 for v in c):
                        raise ValueError("color out of uchar range")
                    rgb[i] = c
            except ValueError as exc:
                raise ParseError(path, f"malformed vertex row ({exc})", line=header_lines + i + 1) from None
        if precision == "float":
            pts = pts.astype(np.float32).astype(float)
    bad = np.flatnonzero(~np.all(np.isfinite(pts), axis=1))
    if len(bad):
        i = int(bad[0])
        if fmt == "binary_little_endian":
            raise ParseError(path, f"non-finite coordinate in vertex {i}", offset=body_start + i * dtype.itemsize)
        raise ParseError(path, f"non-finite coordinate in vertex {i}", line=header_lines + i + 1)
    kind, zone, hemi = frame
    return PointCloud(pts, rgb, kind, zone, hemi, precision)


def write_ply(cloud: PointCloud, path, variant="binary_le"):
    if variant not in ("ascii", "binary_le"):
        raise ValueError(f"unknown PLY variant {variant!r}")
    ptype = "float" if cloud.precision == "float" else "double"
    fmt = "ascii" if variant == "ascii" else "binary_little_endian"
    header = ["ply", f"format {fmt} 1.0"]
    if cloud.frame == "utm":
        header.append(f"comment frame utm {cloud.zone} {cloud.hemisphere}")
    else:
        header.append("comment frame local")
    header.append(f"element vertex {len(cloud.points)}")
    header += [f"property {ptype} {a}" for a in "xyz"]
    if cloud.colors is not None:
        header += [f"property uchar {c}" for c in ("red", "green", "blue")]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(head)
        if variant == "binary_le":
            fdt = "<f4" if ptype == "float" else "<f8"
            fields = [("x", fdt), ("y", fdt), ("z", fdt)]
            if cloud.colors is not None:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            data = np.empty(len(cloud.points), dtype=fields)
            data["x"], data["y"], data["z"] = cloud.points.T
            if cloud.colors is not None:
                data["red"], data["green"], data["blue"] = cloud.colors.T
            fh.write(data.tobytes())
        else:
            pts = cloud.points.astype(np.float32) if ptype == "float" else cloud.points
            lines = []
            for i, p in enumerate(pts):
                row = " ".join(repr(float(v)) if ptype == "double" else repr(float(np.float32(v)))
                               for v in p)
                if cloud.colors is not None:
                    row += " " + " ".join(str(int(c)) for c in cloud.colors[i])
                lines.append(row)
            fh.write(("\n".join(lines) + ("\n" if lines else "")).encode("ascii"))
