"""Every corrupted input raises a typed error that says where the problem is."""
import os
import re
import shutil
import struct

import numpy as np
import pytest

from minegeo.errors import ParseError
from minegeo.io import (PointCloud, read_detections, read_matches, read_ply, read_pose_sidecar,
                        read_sparse_model, write_ply, write_sparse_model)
from minegeo.retrieval import DescriptorIndex, load_external_descriptors, write_descriptors

from conftest import FIXTURES

MODEL = os.path.join(FIXTURES, "model_text")


def has_location(exc: ParseError):
    if exc.line is not None or exc.offset is not None:
        return True
    # record-level errors name the offending record instead
    return bool(re.search(r"(image|point|camera|images|matches|entry)\[?\s*\d+", str(exc)))


def _text_model(tmp_path, fname, old, new):
    d = tmp_path / "m"
    shutil.copytree(MODEL, d)
    p = d / fname
    text = p.read_text()
    assert old in text
    p.write_text(text.replace(old, new, 1))
    return d


TEXT_MODEL_CASES = {
    "unknown_camera_model": ("cameras.txt", "1 PINHOLE", "1 FISHEYE_X"),
    "distorted_camera": ("cameras.txt", "2 SIMPLE_PINHOLE 640 480 500.0 320.0 240.0",
                         "2 SIMPLE_RADIAL 640 480 500.0 320.0 240.0 0.2"),
    "non_numeric_width": ("cameras.txt", "800 600", "eight 600"),
    "short_image_record": ("images.txt", "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 img one.jpg", "1 1.0 0.0"),
    "keypoints_not_triples": ("images.txt", "50.0 60.0 11 70.0 80.0 10", "50.0 60.0 11 70.0 80.0"),
    "bad_keypoint_float": ("images.txt", "100.0 200.0 10", "1oo.0 200.0 10"),
    "non_unit_quaternion": ("images.txt", "1 1.0 0.0 0.0 0.0", "1 2.0 0.0 0.0 0.0"),
    "dangling_point_ref": ("images.txt", "300.0 100.0 11", "300.0 100.0 99"),
    "missing_camera": ("images.txt", "1.0 -2.0 3.0 2 img_two.jpg", "1.0 -2.0 3.0 7 img_two.jpg"),
    "track_not_reciprocated": ("points3D.txt", "1 0 2 1", "1 0 2 0"),
    "odd_track": ("points3D.txt", "0.125 1 2 2 0", "0.125 1 2 2"),
    "bad_color": ("points3D.txt", "255 0 10", "red 0 10"),
}


@pytest.mark.parametrize("case", sorted(TEXT_MODEL_CASES))
def test_corrupted_text_model(tmp_path, case):
    d = _text_model(tmp_path, *TEXT_MODEL_CASES[case])
    with pytest.raises(ParseError) as ei:
        read_sparse_model(d)
    assert has_location(ei.value), str(ei.value)


def test_missing_model_file(tmp_path):
    d = tmp_path / "m"
    shutil.copytree(MODEL, d)
    os.remove(d / "points3D.txt")
    with pytest.raises(ParseError):
        read_sparse_model(d)
    with pytest.raises(ParseError):
        read_sparse_model(d, "text")


@pytest.fixture
def binary_model(tmp_path):
    d = tmp_path / "bin"
    write_sparse_model(read_sparse_model(MODEL), d, "binary")
    return d


@pytest.mark.parametrize("fname", ["cameras.bin", "images.bin", "points3D.bin"])
def test_truncated_binary_everywhere(binary_model, fname):
    p = binary_model / fname
    raw = p.read_bytes()
    for cut in range(0, len(raw), max(1, len(raw) // 25)):
        p.write_bytes(raw[:cut])
        with pytest.raises(ParseError) as ei:
            read_sparse_model(binary_model)
        assert ei.value.offset is not None or ei.value.line is not None or has_location(ei.value)
    p.write_bytes(raw)


@pytest.mark.parametrize("fname", ["cameras.bin", "images.bin", "points3D.bin"])
def test_trailing_bytes(binary_model, fname):
    p = binary_model / fname
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(ParseError) as ei:
        read_sparse_model(binary_model)
    assert ei.value.offset is not None


def test_bad_binary_fields(binary_model):
    cams = binary_model / "cameras.bin"
    raw = bytearray(cams.read_bytes())
    raw[12:16] = struct.pack("<i", 99)  # model id of the first camera
    cams.write_bytes(bytes(raw))
    with pytest.raises(ParseError) as ei:
        read_sparse_model(binary_model)
    assert ei.value.offset == 8


def test_bad_binary_name(binary_model):
    p = binary_model / "images.bin"
    raw = p.read_bytes()
    i = raw.index(b"img one.jpg")
    p.write_bytes(raw[:i] + b"\xff\xfe" + raw[i + 2:])
    with pytest.raises(ParseError) as ei:
        read_sparse_model(binary_model)
    assert ei.value.offset == i


PLY_OK = open(os.path.join(FIXTURES, "cloud_ascii.ply")).read()

PLY_CASES = {
    "no_magic": ("ply\n", "plx\n"),
    "bad_format": ("format ascii 1.0", "format binary_big_endian 1.0"),
    "bad_count": ("element vertex 3", "element vertex three"),
    "too_few_rows": ("element vertex 3", "element vertex 4"),
    "too_many_rows": ("element vertex 3", "element vertex 2"),
    "unknown_property": ("property uchar blue", "property uchar alpha"),
    "bad_value": ("718001.0 4264001.0 13.5", "718001.0 nope 13.5"),
    "nan_value": ("718001.0 4264001.0 13.5", "718001.0 nan 13.5"),
    "color_range": ("0 255 0", "0 256 0"),
    "bad_frame": ("comment frame utm 34 N", "comment frame utm x4 N"),
    "bad_hemisphere": ("comment frame utm 34 N", "comment frame utm 34 Q"),
    "other_element": ("element vertex 3", "element face 3"),
    "unknown_keyword": ("end_header", "bogus\nend_header"),
    "missing_column": ("718002.125 4264002.0 -1.0 0 0 255", "718002.125 4264002.0 -1.0 0 0"),
}


@pytest.mark.parametrize("case", sorted(PLY_CASES))
def test_corrupted_ascii_ply(tmp_path, case):
    old, new = PLY_CASES[case]
    assert old in PLY_OK
    p = tmp_path / "c.ply"
    p.write_text(PLY_OK.replace(old, new, 1))
    with pytest.raises(ParseError) as ei:
        read_ply(p)
    assert ei.value.line is not None or ei.value.offset is not None, str(ei.value)


def test_binary_ply_size_mismatch(tmp_path):
    p = tmp_path / "c.ply"
    write_ply(PointCloud(np.ones((5, 3))), p)
    raw = p.read_bytes()
    for bad in (raw[:-1], raw + b"\x00"):
        p.write_bytes(bad)
        with pytest.raises(ParseError) as ei:
            read_ply(p)
        assert ei.value.offset is not None


SIDECAR_OK = open(os.path.join(FIXTURES, "sidecar.csv")).read()


@pytest.mark.parametrize("old,new", [
    ("image,lat_deg", "img,lat_deg"),
    ("a.jpg,38.5", "a.jpg,north"),
    (",800,600\nb", ",800\nb"),
    ("b.jpg,", "a.jpg,"),
    ("a.jpg,38.5", "a.jpg,95.0"),
])
def test_corrupted_sidecar(tmp_path, old, new):
    p = tmp_path / "s.csv"
    p.write_text(SIDECAR_OK.replace(old, new, 1))
    with pytest.raises(ParseError) as ei:
        read_pose_sidecar(p)
    assert ei.value.line is not None


@pytest.mark.parametrize("text,located_by", [
    ('{"images": [', "line"),
    ('{"images": [{"name": "a", "detections": [{"class": "car", "conf": 1.5, "box": [0,0,1,1]}]}]}', "index"),
    ('{"images": [{"name": "a", "detections": [{"class": "car", "conf": 0.5, "box": [5,0,1,1]}]}]}', "index"),
    ('{"images": [{"name": "a", "detections": [{"class": "car", "box": [0,0,1,1]}]}]}', "index"),
    ('{"images": [{"name": "a", "detections": []}, {"name": "a", "detections": []}]}', "index"),
])
def test_corrupted_detections(tmp_path, text, located_by):
    p = tmp_path / "d.json"
    p.write_text(text)
    with pytest.raises(ParseError) as ei:
        read_detections(p)
    assert ei.value.line is not None if located_by == "line" else has_location(ei.value)


@pytest.mark.parametrize("text", [
    '{"query": "q", "matches": [{"db_image": "a", "query_px": [1, 2]}]}',
    '{"query": "q", "matches": [{"db_image": "a", "query_px": [1], "db_keypoint": 0}]}',
    '{"query": "q", "matches": [{"db_image": "a", "query_px": [1, 2], "db_keypoint": "x"}]}',
])
def test_corrupted_matches(tmp_path, text):
    p = tmp_path / "m.json"
    p.write_text(text)
    with pytest.raises(ParseError) as ei:
        read_matches(p)
    assert has_location(ei.value)


@pytest.fixture
def gdsc(tmp_path):
    idx = DescriptorIndex(["a", "b"], np.eye(2, 4))
    p = tmp_path / "d.gdsc"
    write_descriptors(idx, p)
    return p


def test_corrupted_descriptors(gdsc):
    raw = gdsc.read_bytes()
    cases = [b"XDSC" + raw[4:], raw[:-3], raw + b"\x00\x00\x00\x00",
             raw[:4] + struct.pack("<II", 2, 0) + raw[12:]]
    nan = bytearray(raw)
    nan[-4:] = struct.pack("<f", float("nan"))
    cases.append(bytes(nan))
    big = bytearray(raw)
    big[-16:-12] = struct.pack("<f", 2.0)
    cases.append(bytes(big))
    for bad in cases:
        gdsc.write_bytes(bad)
        with pytest.raises(ParseError) as ei:
            load_external_descriptors(gdsc)
        assert ei.value.offset is not None, str(ei.value)


def test_binary_ply_nan_offset(tmp_path):
    p = tmp_path / "c.ply"
    pts = np.ones((4, 3))
    write_ply(PointCloud(pts), p)
    raw = bytearray(p.read_bytes())
    body = raw.index(b"end_header\n") + len(b"end_header\n")
    raw[body + 2 * 24 + 8: body + 2 * 24 + 16] = struct.pack("<d", float("nan"))
    p.write_bytes(bytes(raw))
    with pytest.raises(ParseError) as ei:
        read_ply(p)
    assert ei.value.offset == body + 2 * 24
