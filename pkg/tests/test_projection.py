import numpy as np
import pytest

from minegeo import geodesy as g
from minegeo.camera import GeoPose, Intrinsics, RigidPose
from minegeo.errors import ZoneMismatchError
from minegeo.io.ply import PointCloud
from minegeo.io.records import Detection
from minegeo.projection import localize_detections, position_detection, project_cloud


def brute_force_visible(cloud, gp, k):
    """One point at a time, no vectorization."""
    out = []
    for i, x in enumerate(cloud.points):
        xc = gp.pose.rotation @ (x - gp.pose.center)
        if xc[2] <= 0:
            continue
        u = k.fx * xc[0] / xc[2] + k.cx
        v = k.fy * xc[1] / xc[2] + k.cy
        if -0.5 <= u < k.width - 0.5 and -0.5 <= v < k.height - 0.5:
            out.append((i, u, v, xc[2]))
    return out


def random_scene(rng):
    n = int(rng.integers(50, 400))
    pts = rng.uniform([-50, -50, -5], [50, 50, 5], (n, 3)) + [500000.0, 4e6, 0.0]
    cloud = PointCloud(pts, None, "utm", 33, "N")
    att = g.EulerNed(rng.uniform(-20, 20), rng.uniform(-90, -40), rng.uniform(-180, 180))
    c = [500000.0 + rng.uniform(-20, 20), 4e6 + rng.uniform(-20, 20), rng.uniform(20, 80)]
    gp = GeoPose(RigidPose(g.rotation_enu_from_camera(att).T, c), 33, "N")
    k = Intrinsics(rng.uniform(300, 900), rng.uniform(300, 900), 320.0, 240.0, 640, 480)
    return cloud, gp, k


def test_project_cloud_equals_brute_force(rng):
    for _ in range(20):
        cloud, gp, k = random_scene(rng)
        got = project_cloud(cloud, gp, k)
        ref = brute_force_visible(cloud, gp, k)
        assert got.indices.tolist() == [r[0] for r in ref]
        assert np.allclose(got.pixels, [r[1:3] for r in ref], rtol=0, atol=1e-9) if ref else len(got) == 0
        assert np.allclose(got.depths, [r[3] for r in ref], rtol=0, atol=1e-9) if ref else True


def test_zone_mismatch():
    cloud = PointCloud(np.zeros((3, 3)) + [5e5, 4e6, 0], None, "utm", 33, "N")
    gp = GeoPose(RigidPose.identity(), 34, "N")
    k = Intrinsics(100, 100, 50, 50, 100, 100)
    with pytest.raises(ZoneMismatchError):
        project_cloud(cloud, gp, k)
    with pytest.raises(ZoneMismatchError):
        project_cloud(PointCloud(np.zeros((3, 3))), GeoPose(RigidPose.identity(), 33), k)
    with pytest.raises(ZoneMismatchError):
        localize_detections([], cloud, gp, k)


def _flat_setup():
    # nadir camera 10 m above a flat 0.1 m grid
    k = Intrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)
    xs = np.arange(-5, 5.001, 0.1)
    gx, gy = np.meshgrid(xs, xs)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)]) + [5e5, 4e6, 0.0]
    cloud = PointCloud(pts, None, "utm", 33, "N")
    r = g.rotation_enu_from_camera(g.EulerNed(0.0, -90.0, 0.0)).T
    gp = GeoPose(RigidPose(r, [5e5, 4e6, 10.0]), 33, "N")
    return cloud, gp, k


def test_centred_box_positions_below_camera():
    cloud, gp, k = _flat_setup()
    objs, missed = localize_detections([Detection("car", 0.8, (40.5, 40.5, 59.5, 59.5))], cloud, gp, k, "a.jpg")
    assert not missed and len(objs) == 1
    p = objs[0].position
    assert abs(p.easting - 5e5) < 1e-6 and abs(p.northing - 4e6) < 1e-6 and p.up == 0.0
    assert objs[0].support > 0 and objs[0].source_image == "a.jpg"


def test_box_without_points_is_unlocalized():
    cloud, gp, k = _flat_setup()
    pts = cloud.points.copy()
    # push every point out of the left half of the image
    cloud2 = PointCloud(pts[pts[:, 0] > 5e5 + 1.0], None, "utm", 33, "N")
    det = Detection("car", 0.5, (0.0, 0.0, 30.0, 100.0))
    objs, missed = localize_detections([det], cloud2, gp, k)
    assert objs == [] and missed == [(0, det)]


def test_depth_band_keeps_foreground():
    cloud, gp, k = _flat_setup()
    # an elevated plate 4 m above ground under the box centre
    plate = np.array([[5e5 + dx, 4e6 + dy, 4.0] for dx in (-0.1, 0, 0.1) for dy in (-0.1, 0, 0.1)])
    both = PointCloud(np.vstack([cloud.points, plate]), None, "utm", 33, "N")
    proj = project_cloud(both, gp, k)
    xyz, support = position_detection((45.0, 45.0, 55.0, 55.0), proj, both, depth_band_m=2.0)
    assert support == 9 and xyz[2] == pytest.approx(4.0)
