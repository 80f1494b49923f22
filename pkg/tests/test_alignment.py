import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from minegeo.alignment import (SimilarityTransform, Trajectory, TrajectoryEntry, anchor_query_trajectory,
                               apply_similarity, apply_to_pose, read_trajectory_csv, umeyama,
                               umeyama_trimmed, write_trajectory_csv)
from minegeo.camera import RigidPose
from minegeo.errors import DegenerateConfigurationError, ParseError, ValidationError


def random_sim(rng):
    return SimilarityTransform(float(rng.uniform(0.1, 10)), Rotation.random(random_state=rng).as_matrix(),
                               rng.uniform(-100, 100, 3))


def test_frozen_example():
    # 90 degrees about z, scale 2, shift (1, 2, 3)
    src = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    r = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    dst = 2 * src @ r.T + [1, 2, 3]
    t = umeyama(src, dst)
    assert t.scale == pytest.approx(2.0, abs=1e-12)
    assert np.allclose(t.rotation, r, atol=1e-12) and np.allclose(t.translation, [1, 2, 3], atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_recovers_random_similarity(seed):
    rng = np.random.default_rng(seed)
    truth = random_sim(rng)
    src = rng.uniform(-50, 50, (int(rng.integers(3, 30)), 3))
    t = umeyama(src, apply_similarity(truth, src))
    assert abs(t.scale - truth.scale) <= 1e-9 * truth.scale
    assert np.max(np.abs(t.rotation - truth.rotation)) <= 1e-9
    assert np.max(np.abs(t.translation - truth.translation)) <= 1e-9 * max(1, truth.scale) * 100


def test_no_scale_mode(rng):
    truth = random_sim(rng)
    truth = SimilarityTransform(1.0, truth.rotation, truth.translation)
    src = rng.uniform(-5, 5, (10, 3))
    assert umeyama(src, apply_similarity(truth, src), with_scale=False).scale == 1.0


def test_reflection_is_never_returned(rng):
    src = rng.uniform(-1, 1, (10, 3))
    dst = src * [1, 1, -1]
    t = umeyama(src, dst)
    assert np.linalg.det(t.rotation) == pytest.approx(1.0)


def test_degenerate_inputs():
    with pytest.raises(DegenerateConfigurationError):
        umeyama(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfigurationError):
        umeyama(line, line)
    with pytest.raises(DegenerateConfigurationError):
        umeyama(np.ones((4, 3)), np.ones((4, 3)))
    with pytest.raises(ValidationError):
        umeyama(np.zeros((3, 3)), np.zeros((4, 3)))


def test_trimmed_rejects_an_outlier(rng):
    truth = random_sim(rng)
    src = rng.uniform(-50, 50, (20, 3))
    dst = apply_similarity(truth, src)
    dst[3] += 500.0
    t = umeyama_trimmed(src, dst)
    assert abs(t.scale - truth.scale) < 1e-9 * truth.scale


def test_inverse_and_compose(rng):
    a, b = random_sim(rng), random_sim(rng)
    x = rng.normal(size=(5, 3))
    assert np.allclose(apply_similarity(a.inverse(), apply_similarity(a, x)), x, atol=1e-9)
    assert np.allclose(apply_similarity(a.compose(b), x), apply_similarity(a, apply_similarity(b, x)))
    assert np.allclose(a.as_matrix()[:3, :3], a.scale * a.rotation)


def test_apply_to_pose_keeps_projection(rng):
    t = random_sim(rng)
    pose = RigidPose(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
    x = rng.normal(size=(4, 3)) + pose.center
    p2 = apply_to_pose(t, pose)
    a = (x - pose.center) @ pose.rotation.T
    b = (apply_similarity(t, x) - p2.center) @ p2.rotation.T
    # same rays, depth scaled by s
    assert np.allclose(b, t.scale * a, atol=1e-9)


def _trajectory(rng, n=8):
    entries = [TrajectoryEntry(f"q{i}.jpg", RigidPose(Rotation.random(random_state=rng).as_matrix(),
                                                     [i * 3.0, np.sin(i) * 4, rng.normal()])) for i in range(n)]
    return Trajectory(entries)


def test_anchor_labels_and_exactness(rng):
    local = _trajectory(rng)
    truth = random_sim(rng)
    glob = {e.name: apply_to_pose(truth, e.pose) for e in local}
    reg = {n: glob[n] for n in ["q0.jpg", "q2.jpg", "q5.jpg", "q7.jpg"]}
    res = anchor_query_trajectory(local, reg)
    assert res.success
    for e in res.trajectory:
        assert e.status == ("registered" if e.name in reg else "anchored")
        assert np.allclose(e.pose.center, glob[e.name].center, atol=1e-8)


def test_anchor_needs_three_frames(rng):
    local = _trajectory(rng)
    res = anchor_query_trajectory(local, {"q0.jpg": local.get("q0.jpg").pose})
    assert not res.success and res.trajectory is local


def test_trajectory_names_unique():
    p = RigidPose.identity()
    with pytest.raises(ValidationError):
        Trajectory([TrajectoryEntry("a", p), TrajectoryEntry("a", p)])


def test_trajectory_csv_round_trip(tmp_path, rng):
    traj = _trajectory(rng, 4)
    traj.entries.append(TrajectoryEntry("z_failed.jpg", None))
    traj.entries[0].registered = True
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    back = read_trajectory_csv(path, 34, "N")
    assert [e.name for e in back] == sorted(e.name for e in traj)
    for e in traj:
        b = back.get(e.name)
        assert b.status == e.status
        if e.pose is None:
            assert b.pose is None
        else:
            assert np.allclose(b.pose.rotation, e.pose.rotation, atol=1e-12)
            assert np.array_equal(b.pose.center, e.pose.center)
    path.write_text("image,x\n")
    with pytest.raises(ParseError):
        read_trajectory_csv(path)
