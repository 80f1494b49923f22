import math

import numpy as np
import pytest

from minegeo.camera import GeoPose, RigidPose
from minegeo.errors import ValidationError, ZoneMismatchError
from minegeo import evaluation as ev
from minegeo.geodesy import rot_z
from minegeo.io.records import Detection

import detection_oracle as oracle


def random_instance(rng, classes=("car", "human", "truck")):
    gt, preds = {}, {}
    for i in range(int(rng.integers(1, 4))):
        img = f"img{i}"
        gt[img] = []
        preds[img] = []
        for _ in range(int(rng.integers(0, 5))):
            x, y = rng.integers(0, 20, 2)
            w, h = rng.integers(2, 8, 2)
            gt[img].append(Detection(str(rng.choice(classes)), 1.0, (x, y, x + w, y + h)))
        for _ in range(int(rng.integers(0, 6))):
            if gt[img] and rng.random() < 0.6:
                base = gt[img][int(rng.integers(len(gt[img])))]
                jit = rng.integers(-2, 3, 4)
                b = np.array(base.box) + jit
                if b[2] <= b[0] or b[3] <= b[1]:
                    b = np.array(base.box)
                label = base.label if rng.random() < 0.8 else str(rng.choice(classes))
            else:
                x, y = rng.integers(0, 20, 2)
                b = np.array([x, y, x + rng.integers(2, 8), y + rng.integers(2, 8)])
                label = str(rng.choice(classes))
            # a coarse confidence grid makes ties common
            preds[img].append(Detection(label, float(rng.integers(1, 10)) / 10, tuple(b)))
    return gt, preds


def test_metrics_match_brute_force_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        gt, preds = random_instance(rng)
        classes = ev.gt_classes(gt)
        for c in classes:
            for t in (0.5, 0.75):
                a, b = ev.average_precision(gt, preds, c, t), oracle.ap(gt, preds, c, t)
                assert a == b or (math.isnan(a) and math.isnan(b))
        thr, curves, mean, best_t, best_f1 = ev.f1_confidence(gt, preds)
        ref = oracle.f1_curves(gt, preds, thr)
        assert set(curves) == set(ref)
        for c in curves:
            assert np.array_equal(curves[c], ref[c])
        cm = ev.confusion_matrix(gt, preds)
        assert np.array_equal(cm.matrix, oracle.confusion(gt, preds, cm.classes))


def test_perfect_predictions():
    gt = {"a": [Detection("car", 1.0, (0, 0, 10, 10)), Detection("human", 1.0, (20, 20, 25, 30))],
          "b": [Detection("car", 1.0, (5, 5, 15, 15))]}
    preds = {k: [Detection(d.label, 0.9, d.box) for d in v] for k, v in gt.items()}
    assert ev.average_precision(gt, preds, "car") == 1.0
    rep = ev.map_suite(gt, preds)
    assert rep.map50 == 1.0 and rep.map50_95 == 1.0 and rep.best_f1 == 1.0
    assert np.array_equal(rep.confusion.matrix, np.diag([1.0, 1.0, 0.0]))


def test_frozen_ap_example():
    # gt: two cars; preds ranked TP, FP, TP -> precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    gt = {"a": [Detection("car", 1, (0, 0, 10, 10)), Detection("car", 1, (20, 0, 30, 10))]}
    preds = {"a": [Detection("car", 0.9, (0, 0, 10, 10)), Detection("car", 0.8, (50, 50, 60, 60)),
                   Detection("car", 0.7, (20, 0, 30, 10))]}
    # 51 grid points at recall <= 0.5 see precision 1, the other 50 see 2/3
    assert ev.average_precision(gt, preds, "car") == pytest.approx((51 * 1.0 + 50 * (2 / 3)) / 101, abs=1e-15)


def test_ap_edge_cases():
    gt = {"a": [Detection("car", 1, (0, 0, 1, 1))]}
    assert math.isnan(ev.average_precision(gt, {"a": []}, "human"))
    assert ev.average_precision(gt, {"a": []}, "car") == 0.0
    # a duplicate detection of one object is a false positive
    preds = {"a": [Detection("car", 0.9, (0, 0, 1, 1)), Detection("car", 0.8, (0, 0, 1, 1))]}
    assert ev.interpolated_ap([True, False], 1) == 1.0
    assert ev.average_precision(gt, preds, "car") == 1.0


def test_confusion_orientation_and_normalization():
    gt = {"a": [Detection("car", 1, (0, 0, 10, 10)), Detection("truck", 1, (20, 20, 30, 30))]}
    preds = {"a": [Detection("truck", 0.9, (0, 0, 10, 10)), Detection("car", 0.9, (50, 50, 60, 60)),
                   Detection("car", 0.1, (20, 20, 30, 30))]}
    cm = ev.confusion_matrix(gt, preds)
    assert cm.classes == ["car", "truck"]
    assert cm.count("car", "truck") == 1  # true car predicted as truck
    assert cm.count("truck", "background") == 1  # missed (the 0.1 prediction is below threshold)
    assert cm.count("background", "car") == 1  # spurious car
    n = cm.normalized()
    assert np.allclose(n.matrix.sum(axis=0), [1, 1, 1])


def test_iou_frozen():
    assert ev.iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    assert ev.iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0


# ---------------------------------------------------------------- localization

def _gp(c, yaw=0.0):
    return GeoPose(RigidPose(rot_z(yaw), c), 34, "N")


def test_pose_errors():
    t, r = ev.pose_errors(_gp([3.0, 4.0, 0.0], 10.0), _gp([0.0, 0.0, 0.0]))
    assert t == 5.0 and r == pytest.approx(10.0)
    with pytest.raises(ZoneMismatchError):
        ev.pose_errors(_gp([0, 0, 0]), GeoPose(RigidPose.identity(), 35))


def test_threshold_recall_and_cdf_frozen():
    rec = ev.threshold_recall([0.1, 0.4, 3.0, 9.0], [1.0, 6.0, 1.0, 1.0], localized=[True, True, True, False])
    assert rec["joint"] == [0.25, 0.25, 0.75]
    assert rec["translation"] == [0.25, 0.5, 0.75]
    assert ev.cdf([2.0, 1.0, 2.0, 3.0]) == [(1.0, 0.25), (2.0, 0.75), (3.0, 1.0)]
    assert ev.error_summary([1.0, 3.0]) == (2.0, 1.0)
    with pytest.raises(ValidationError):
        ev.error_summary([])


def test_summary_table_layout():
    text = ev.render_summary_table(3.69, 1.79, 1.77, 0.77)
    lines = text.splitlines()
    assert lines[1] == "| Metric                                   | Value |"
    assert lines[3] == "| Mean Translation Error (m)               |  3.69 |"
    assert lines[6] == "| Standard Deviation Orientation Error (°) |  0.77 |"
    assert lines[0] == lines[2] == lines[-1] and len(lines) == 8
    assert len({len(l) for l in lines}) == 1


def test_localization_report_counts_failures():
    qs = [ev.QueryError("a", 0.1, 1.0, "registered"), ev.QueryError("b", 0.3, 1.0, "anchored"),
          ev.QueryError("c", None, None, "failed")]
    rep = ev.localization_report(qs)
    assert rep.mean_translation == pytest.approx(0.2)
    assert rep.recall_joint[0] == pytest.approx(1 / 3)
    assert "failed 1" in rep.render()
    with pytest.raises(ValidationError):
        ev.localization_report([ev.QueryError("c", None, None, "failed")])
