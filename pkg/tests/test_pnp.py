import math

import numpy as np
import pytest

from minegeo import geodesy as g
from minegeo.camera import Intrinsics, RigidPose
from minegeo.errors import DegenerateConfigurationError, ValidationError
from minegeo.evaluation import rotation_angle_deg
from minegeo.io.records import Match
from minegeo.io.sparse import Camera, Image, Point3D, SparseModel
from minegeo.pnp import (Correspondences, RansacParams, gather_correspondences, nearest_rotation, pnp_dlt,
                         pnp_ransac, perturb_pose, refine_pose, reprojection_errors, residuals_and_jacobian)

K = Intrinsics(700.0, 700.0, 400.0, 300.0, 800, 600)


def make_corrs(rng, n=100, noise=0.0, offset=(0.0, 0.0, 0.0)):
    att = g.EulerNed(rng.uniform(-5, 5), -90 + rng.uniform(-5, 5), rng.uniform(-180, 180))
    pose = RigidPose(g.rotation_enu_from_camera(att).T, np.array(offset) + [0, 0, 60.0])
    uv = rng.uniform([0, 0], [799, 599], (n, 2))
    depth = 60.0 + rng.uniform(-8, 8, n)
    xc = np.column_stack([(uv[:, 0] - K.cx) / K.fx * depth, (uv[:, 1] - K.cy) / K.fy * depth, depth])
    pts = xc @ pose.rotation + pose.center
    px = uv + rng.normal(0, noise, uv.shape) if noise else uv
    return Correspondences(px, pts, np.arange(n)), pose


def test_dlt_exact_on_noiseless_data(rng):
    corrs, pose = make_corrs(rng)
    est = pnp_dlt(corrs, K)
    assert np.linalg.norm(est.center - pose.center) < 1e-8
    assert rotation_angle_deg(est.rotation, pose.rotation) < 1e-8


def test_dlt_precise_at_utm_magnitudes(rng):
    corrs, pose = make_corrs(rng, offset=(718000.0, 4264000.0, 300.0))
    est = pnp_dlt(corrs, K)
    assert np.linalg.norm(est.center - pose.center) < 1e-6


def test_dlt_degenerate_inputs(rng):
    corrs, _ = make_corrs(rng, n=10)
    with pytest.raises(ValidationError):
        pnp_dlt(corrs.subset(np.arange(5)), K)
    # coplanar points lie in the DLT null space
    pts = corrs.points.copy()
    pts[:, 2] = 0.0
    with pytest.raises(DegenerateConfigurationError):
        pnp_dlt(Correspondences(corrs.pixels, pts), K)


def test_jacobian_matches_finite_differences(rng):
    corrs, pose = make_corrs(rng, n=20, noise=1.0)
    res, jac = residuals_and_jacobian(pose, corrs, K)
    h = 1e-6
    num = np.zeros_like(jac)
    for j in range(6):
        d = np.zeros(6)
        d[j] = h
        rp, _ = residuals_and_jacobian(perturb_pose(pose, d), corrs, K)
        rm, _ = residuals_and_jacobian(perturb_pose(pose, -d), corrs, K)
        num[:, j] = (rp - rm) / (2 * h)
    assert np.max(np.abs(num - jac)) < 1e-5 * max(1.0, np.max(np.abs(jac)))


def test_refine_never_increases_cost(rng):
    corrs, pose = make_corrs(rng, noise=0.5)
    start = perturb_pose(pose, np.r_[0.01, -0.02, 0.01, 0.5, -0.3, 0.2])
    e0 = np.sqrt(np.mean(reprojection_errors(start, corrs, K) ** 2))
    est, rmse, ok = refine_pose(start, corrs, K)
    assert ok and rmse <= e0 and rmse < 1.0
    assert rotation_angle_deg(est.rotation, pose.rotation) < 0.05


def test_ransac_with_outliers_deterministic(rng):
    corrs, pose = make_corrs(rng, n=200, noise=0.5)
    px = corrs.pixels.copy()
    bad = rng.choice(200, 80, replace=False)
    px[bad] = rng.uniform([0, 0], [799, 599], (80, 2))
    c2 = Correspondences(px, corrs.points)
    a = pnp_ransac(c2, K, RansacParams(seed=4))
    b = pnp_ransac(c2, K, RansacParams(seed=4))
    assert a.success and np.array_equal(a.inliers, b.inliers)
    assert np.array_equal(a.pose.rotation, b.pose.rotation)
    assert rotation_angle_deg(a.pose.rotation, pose.rotation) < 0.1
    assert not a.inliers[bad].all() and a.inliers.sum() >= 110


def test_ransac_failure_is_typed(rng):
    pts = rng.uniform(-10, 10, (40, 3)) + [0, 0, 50]
    px = rng.uniform([0, 0], [799, 599], (40, 2))
    res = pnp_ransac(Correspondences(px, pts), K, RansacParams(max_iters=200, min_inliers=30))
    assert not res.success and res.pose is None and res.reason


def test_nearest_rotation_projects_onto_so3(rng):
    m = rng.normal(size=(5, 3, 3))
    r = nearest_rotation(m)
    for ri in r:
        assert g.is_rotation(ri, 1e-12)


def _tiny_model():
    cam = Camera(1, "PINHOLE", 800, 600, (700.0, 700.0, 400.0, 300.0))
    im = Image(1, "db.jpg", np.array([1.0, 0, 0, 0]), np.zeros(3), 1,
               np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), np.array([7, -1, 8]))
    pts = {7: Point3D(7, np.array([1.0, 2, 3]), np.array([0, 0, 0]), 0.1, np.array([1]), np.array([0])),
           8: Point3D(8, np.array([4.0, 5, 6]), np.array([0, 0, 0]), 0.1, np.array([1]), np.array([2]))}
    return SparseModel({1: cam}, {1: im}, pts)


def test_gather_correspondences_rules():
    model = _tiny_model()
    ms = [Match("db.jpg", (10.0, 10.0), 0), Match("db.jpg", (10.0, 10.0), 0),  # duplicate
          Match("db.jpg", (11.0, 11.0), 1),  # untriangulated keypoint
          Match("db.jpg", (12.0, 12.0), 2)]
    c = gather_correspondences(ms, model)
    assert c.point_ids.tolist() == [7, 8]
    assert np.array_equal(c.points[1], [4.0, 5, 6])
    assert len(gather_correspondences(ms, model, restrict_to={"other.jpg"})) == 0
    with pytest.raises(ValidationError):
        gather_correspondences([Match("nope.jpg", (0.0, 0.0), 0)], model)
    with pytest.raises(ValidationError):
        gather_correspondences([Match("db.jpg", (0.0, 0.0), 9)], model)
