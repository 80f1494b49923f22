"""Pose from 2D-3D correspondences: 6-point DLT, RANSAC, Gauss-Newton refinement.

The minimal solver is the linear DLT on Hartley-normalized coordinates with
K known; it is the single swap point if a P3P solver is ever wanted.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import Intrinsics, RigidPose
from .errors import DegenerateConfigurationError, ValidationError

MIN_POINTS = 6


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Struct-of-arrays correspondence set: pixels (N, 2), points (N, 3), ids (N,)."""

    pixels: np.ndarray
    points: np.ndarray
    point_ids: np.ndarray | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(px) != len(pts):
            raise ValidationError("pixel and point counts differ")
        if not (np.all(np.isfinite(px)) and np.all(np.isfinite(pts))):
            raise ValidationError("non-finite correspondence")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "points", pts)
        if self.point_ids is not None:
            object.__setattr__(self, "point_ids", np.asarray(self.point_ids, dtype=np.int64))

    def __len__(self):
        return len(self.pixels)

    def subset(self, mask):
        ids = None if self.point_ids is None else self.point_ids[mask]
        return Correspondences(self.pixels[mask], self.points[mask], ids)


@dataclass(frozen=True)
class RansacParams:
    inlier_px: float = 4.0
    confidence: float = 0.999
    max_iters: int = 10000
    min_inliers: int = 12
    seed: int = 0


@dataclass(eq=False)
class PnpResult:
    success: bool
    pose: RigidPose | None
    inliers: np.ndarray
    rmse: float
    iterations: int
    reason: str = ""


def nearest_rotation(m):
    """Closest rotation (Frobenius) to one matrix or a stack of them."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    fix = np.ones(np.shape(m)[:-1])
    fix[..., 2] = d
    return (u * fix[..., None, :]) @ vt


def _dlt_batch(xcam, world):
    """Batched DLT. xcam (B, n, 2) normalized camera coords, world (B, n, 3).

    Returns rotations (B, 3, 3), centres (B, 3) and a validity mask (B,).
    Each sample is Hartley-normalized on both sides; the pose is decomposed
    in the normalized world frame so large (UTM) coordinates keep precision.
    """
    b, n, _ = xcam.shape
    c2 = xcam.mean(axis=1, keepdims=True)
    s2 = np.sqrt(2.0) / np.linalg.norm(xcam - c2, axis=2).mean(axis=1)
    c3 = world.mean(axis=1, keepdims=True)
    s3 = np.sqrt(3.0) / np.linalg.norm(world - c3, axis=2).mean(axis=1)
    valid = np.isfinite(s2) & np.isfinite(s3)
    s2 = np.where(valid, s2, 1.0)
    s3 = np.where(valid, s3, 1.0)
    xn = (xcam - c2) * s2[:, None, None]
    xw = (world - c3) * s3[:, None, None]
    xh = np.concatenate([xw, np.ones((b, n, 1))], axis=2)

    a = np.zeros((b, 2 * n, 12))
    a[:, 0::2, 0:4] = xh
    a[:, 0::2, 8:12] = -xn[:, :, :1] * xh
    a[:, 1::2, 4:8] = xh
    a[:, 1::2, 8:12] = -xn[:, :, 1:2] * xh
    _, s, vt = np.linalg.svd(a)
    valid &= s[:, 10] > 1e-9 * s[:, 0]
    p = vt[:, -1].reshape(b, 3, 4)
    # undo the image-side normalization: x = xn / s2 + c2
    p = p.copy()
    p[:, :2] = p[:, :2] / s2[:, None, None] + c2[:, 0, :, None] * p[:, 2:3]

    depth = xh @ p[:, 2, :, None]
    flip = np.count_nonzero(depth[..., 0] > 0, axis=1) < n / 2
    p[flip] *= -1
    m = p[:, :, :3]
    valid &= np.linalg.det(m) > 0
    scale = np.linalg.svd(m, compute_uv=False).mean(axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    r = nearest_rotation(m)
    center_n = -np.einsum("bji,bj->bi", r, p[:, :, 3] / scale[:, None])
    centers = center_n / s3[:, None] + c3[:, 0]
    valid &= np.all(np.isfinite(centers), axis=1)
    return r, centers, valid


def _normalized_pixels(pixels, k):
    return np.column_stack([(pixels[:, 0] - k.cx) / k.fx, (pixels[:, 1] - k.cy) / k.fy])


def pnp_dlt(corrs: Correspondences, k: Intrinsics) -> RigidPose:
    n = len(corrs)
    if n < MIN_POINTS:
        raise ValidationError(f"DLT needs at least {MIN_POINTS} correspondences, got {n}")
    r, c, ok = _dlt_batch(_normalized_pixels(corrs.pixels, k)[None], corrs.points[None])
    if not ok[0]:
        raise DegenerateConfigurationError(
            "degenerate DLT configuration (coplanar/collinear points or reflected solution)"
        )
    return RigidPose(r[0], c[0])


def reprojection_errors(pose: RigidPose, corrs: Correspondences, k: Intrinsics):
    """Per-correspondence pixel error; inf for points behind the camera."""
    xc = (corrs.points - pose.center) @ pose.rotation.T
    z = xc[:, 2]
    err = np.full(len(corrs), np.inf)
    ok = z > 0
    u = k.fx * xc[ok, 0] / z[ok] + k.cx
    v = k.fy * xc[ok, 1] / z[ok] + k.cy
    err[ok] = np.hypot(u - corrs.pixels[ok, 0], v - corrs.pixels[ok, 1])
    return err


def residuals_and_jacobian(pose: RigidPose, corrs: Correspondences, k: Intrinsics):
    """Stacked residuals (2N,) and Jacobian (2N, 6).

    Parameters are a rotation increment w (R <- exp([w]) R) followed by the
    camera centre.
    """
    xc = (corrs.points - pose.center) @ pose.rotation.T
    x, y, z = xc.T
    res = np.empty(2 * len(corrs))
    res[0::2] = k.fx * x / z + k.cx - corrs.pixels[:, 0]
    res[1::2] = k.fy * y / z + k.cy - corrs.pixels[:, 1]

    n = len(corrs)
    dproj = np.zeros((n, 2, 3))
    dproj[:, 0, 0] = k.fx / z
    dproj[:, 0, 2] = -k.fx * x / z**2
    dproj[:, 1, 1] = k.fy / z
    dproj[:, 1, 2] = -k.fy * y / z**2
    # d xc / d w = -[xc]_x ; d xc / d c = -R
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1], skew[:, 0, 2] = -z, y
    skew[:, 1, 0], skew[:, 1, 2] = z, -x
    skew[:, 2, 0], skew[:, 2, 1] = -y, x
    jw = -dproj @ skew
    jc = -dproj @ pose.rotation
    jac = np.concatenate([jw, jc], axis=2).reshape(2 * n, 6)
    return res, jac


def perturb_pose(pose: RigidPose, delta):
    """Apply a 6-vector (rotation increment, centre increment)."""
    dr = Rotation.from_rotvec(delta[:3]).as_matrix()
    return RigidPose(nearest_rotation(dr @ pose.rotation), pose.center + delta[3:])


def refine_pose(pose: RigidPose, corrs: Correspondences, k: Intrinsics,
                max_iters=100, rel_tol=1e-10):
    """Gauss-Newton on squared reprojection error.

    Returns ``(pose, rmse, ok)``. ``ok`` is False when the normal equations
    were singular at the start, in which case the input pose is returned.
    The returned rmse never exceeds the input rmse.
    """
    if len(corrs) < MIN_POINTS:
        raise ValidationError(f"refinement needs at least {MIN_POINTS} correspondences")

    def cost_of(p):
        xc = (corrs.points - p.center) @ p.rotation.T
        if np.any(xc[:, 2] <= 0):
            return np.inf
        r, _ = residuals_and_jacobian(p, corrs, k)
        return float(r @ r)

    cost = cost_of(pose)
    n = len(corrs)
    if not np.isfinite(cost):
        return pose, math.inf, False
    for it in range(max_iters):
        if cost <= 1e-30:
            break
        res, jac = residuals_and_jacobian(pose, corrs, k)
        jtj = jac.T @ jac
        if np.linalg.cond(jtj) > 1e14:
            return pose, math.sqrt(cost / n), it > 0
        step = -np.linalg.solve(jtj, jac.T @ res)
        # backtrack so the cost never increases
        improved = False
        alpha = 1.0
        for _ in range(20):
            cand = perturb_pose(pose, alpha * step)
            c = cost_of(cand)
            if c <= cost:
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        rel = (cost - c) / cost
        pose, cost = cand, c
        if rel < rel_tol:
            break
    return pose, math.sqrt(cost / n), True


def _iterations_needed(inlier_ratio, confidence, sample_size=MIN_POINTS):
    if inlier_ratio >= 1.0:
        return 0
    if inlier_ratio <= 0.0:
        return math.inf
    p_good = inlier_ratio**sample_size
    if p_good <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log1p(-p_good)


def pnp_ransac(corrs: Correspondences, k: Intrinsics, params: RansacParams = RansacParams()) -> PnpResult:
    """Robust pose from 6-point DLT hypotheses; the best one is refit on its consensus set and refined.

    A best consensus below ``min_inliers`` yields ``success=False`` rather
    than an exception; that is the registration-failed signal.
    """
    n = len(corrs)
    if n < MIN_POINTS:
        raise ValidationError(f"RANSAC needs at least {MIN_POINTS} correspondences, got {n}")
    rng = np.random.default_rng(params.seed)
    xcam = _normalized_pixels(corrs.pixels, k)
    best_mask = np.zeros(n, dtype=bool)
    best_count = 0
    best_score = math.inf
    needed = params.max_iters
    it = 0
    n_degenerate = 0
    batch = 32
    while it < min(needed, params.max_iters):
        # draw a batch of samples; hypotheses are consumed in draw order so the
        # adaptive stop is exact per hypothesis
        samples = np.stack([rng.choice(n, MIN_POINTS, replace=False) for _ in range(batch)])
        rots, centers, ok = _dlt_batch(xcam[samples], corrs.points[samples])
        xc = np.einsum("bij,bnj->bni", rots, corrs.points[None] - centers[:, None])
        z = xc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            du = k.fx * xc[..., 0] / z + k.cx - corrs.pixels[:, 0]
            dv = k.fy * xc[..., 1] / z + k.cy - corrs.pixels[:, 1]
            err = np.where(z > 0, np.hypot(du, dv), np.inf)
        inl = err <= params.inlier_px
        counts = inl.sum(axis=1)
        scores = np.sum(np.minimum(err, params.inlier_px) ** 2, axis=1)
        for j in range(batch):
            if it >= min(needed, params.max_iters):
                break
            it += 1
            if not ok[j]:
                n_degenerate += 1
                continue
            count = int(counts[j])
            if count > best_count or (count == best_count and scores[j] < best_score):
                best_mask, best_count, best_score = inl[j], count, float(scores[j])
                needed = _iterations_needed(count / n, params.confidence)
    if best_count == 0 and n_degenerate == it:
        raise DegenerateConfigurationError("every RANSAC sample was degenerate")
    if best_count < max(params.min_inliers, MIN_POINTS):
        return PnpResult(False, None, best_mask, math.inf, it,
                         f"{best_count} inliers < min_inliers {params.min_inliers}")

    mask = best_mask
    pose = None
    for _ in range(3):
        inl = corrs.subset(mask)
        try:
            start = pnp_dlt(inl, k)
        except DegenerateConfigurationError:
            if pose is None:
                return PnpResult(False, None, mask, math.inf, it, "degenerate inlier set")
            break
        cand, _, _ = refine_pose(start, inl, k)
        if pose is not None:
            # keep whichever explains the current inliers better
            if np.sum(reprojection_errors(cand, inl, k) ** 2) > np.sum(reprojection_errors(pose, inl, k) ** 2):
                cand = pose
        pose = cand
        new_mask = reprojection_errors(pose, corrs, k) <= params.inlier_px
        if np.array_equal(new_mask, mask) or new_mask.sum() < max(params.min_inliers, MIN_POINTS):
            break
        mask = new_mask
    pose, rmse, _ = refine_pose(pose, corrs.subset(mask), k)
    if mask.sum() < params.min_inliers:
        return PnpResult(False, None, mask, math.inf, it, "inliers lost during refinement")
    return PnpResult(True, pose, mask, rmse, it)


def gather_correspondences(matches, model, restrict_to=None) -> Correspondences:
    """2D-3D correspondences from query->database keypoint matches.

    Matches to untriangulated keypoints are dropped and repeated
    (query pixel, 3D point) pairs are collapsed. ``restrict_to`` optionally
    limits the database images considered (e.g. retrieval top-k).
    """
    by_name = model.name_index()
    seen = set()
    px, pts, ids = [], [], []
    for m in matches:
        im = by_name.get(m.db_image)
        if im is None:
            raise ValidationError(f"match references unknown database image {m.db_image!r}")
        if not 0 <= m.db_keypoint < len(im.point3d_ids):
            raise ValidationError(f"match references keypoint {m.db_keypoint} outside image {m.db_image!r}")
        if restrict_to is not None and m.db_image not in restrict_to:
            continue
        pid = int(im.point3d_ids[m.db_keypoint])
        if pid == -1:
            continue
        key = (float(m.query_px[0]), float(m.query_px[1]), pid)
        if key in seen:
            continue
        seen.add(key)
        px.append(key[:2])
        pts.append(model.points3d[pid].xyz)
        ids.append(pid)
    return Correspondences(np.array(px).reshape(-1, 2), np.array(pts).reshape(-1, 3), np.array(ids, dtype=np.int64))
