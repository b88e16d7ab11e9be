import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from vehnet.metrics import (ConfusionMatrix, EmptyEvaluationError, boundary_ignore_mask,
                            confusion, derive_report, f1_score, instance_iou)
from vehnet.objects import connected_components

CLASSES = ("a", "b", "c")


def ignore_scan(gt, radius):
    h, w = gt.shape
    out = np.zeros_like(gt, dtype=bool)
    for y in range(h):
        for x in range(w):
            win = gt[max(y - radius, 0) : y + radius + 1, max(x - radius, 0) : x + radius + 1]
            out[y, x] = (win != gt[y, x]).any()
    return out


class TestBoundaryMask:
    def test_uniform(self):
        assert not boundary_ignore_mask(np.full((10, 10), 2), 3).any()

    def test_radius_zero(self):
        gt = np.random.default_rng(0).integers(0, 3, (8, 8))
        assert not boundary_ignore_mask(gt, 0).any()

    def test_vertical_boundary_band(self):
        gt = np.zeros((12, 20), int)
        gt[:, 10:] = 1
        m = boundary_ignore_mask(gt, 3)
        assert m.sum(axis=1).tolist() == [6] * 12
        assert m[:, 7:13].all() and not m[:, :7].any() and not m[:, 13:].any()

    @pytest.mark.parametrize("radius", [1, 2, 3])
    def test_matches_scan(self, radius):
        gt = np.random.default_rng(radius).integers(0, 3, (15, 13))
        gt[5:12, 3:10] = 1
        assert np.array_equal(boundary_ignore_mask(gt, radius), ignore_scan(gt, radius))

    def test_evaluated_count_monotone(self):
        gt = np.zeros((30, 30), int)
        gt[8:20, 5:25] = 1
        counts = [(~boundary_ignore_mask(gt, r)).sum() for r in range(6)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))


class TestConfusion:
    def test_diagonal(self):
        gt = np.random.default_rng(0).integers(0, 3, (9, 9))
        cm = confusion(gt, gt, CLASSES)
        assert np.array_equal(cm.counts, np.diag(np.bincount(gt.ravel(), minlength=3)))

    def test_tally_oracle(self):
        rng = np.random.default_rng(1)
        gt, pred = rng.integers(0, 3, (16, 16)), rng.integers(0, 3, (16, 16))
        mask = rng.random((16, 16)) < 0.2
        cm = confusion(pred, gt, CLASSES, ignore_classes=("c",), ignore_mask=mask)
        ref = np.zeros((3, 3), int)
        skipped = 0
        for y in range(16):
            for x in range(16):
                if mask[y, x] or gt[y, x] == 2:
                    skipped += 1
                    continue
                ref[gt[y, x], pred[y, x]] += 1
        assert np.array_equal(cm.counts, ref)
        assert cm.ignored == skipped
        assert cm.total + cm.ignored == 256

    def test_all_ignored(self):
        gt = np.zeros((4, 4), int)
        cm = confusion(gt, gt, CLASSES, ignore_classes=(0,))
        assert cm.total == 0
        with pytest.raises(EmptyEvaluationError):
            derive_report(cm)

    def test_merge(self):
        a = ConfusionMatrix(np.eye(3, dtype=int), CLASSES, 1)
        b = ConfusionMatrix(np.ones((3, 3), int), CLASSES, 2)
        assert np.array_equal((a + b).counts, (b + a).counts)
        assert (a + b).ignored == 3


class TestReport:
    def test_paper_f1_cross_check(self):
        assert float(f1_score(0.878, 0.890)) == pytest.approx(0.8840, abs=5e-4)

    def test_perfect(self):
        r = derive_report(ConfusionMatrix(np.diag([5, 3, 2]), CLASSES))
        assert r.overall_accuracy == 1.0
        assert np.all(r.f1 == 1) and np.all(r.iou == 1) and r.mean_iou == 1.0

    def test_hand_matrix(self):
        r = derive_report(ConfusionMatrix(np.array([[3, 1], [2, 4]]), ("x", "y")))
        assert r.precision[0] == pytest.approx(0.6)
        assert r.recall[0] == pytest.approx(0.75)
        assert r.iou[0] == pytest.approx(0.5)
        assert r.overall_accuracy == pytest.approx(0.7)

    def test_absent_class_excluded_from_mean_iou(self):
        counts = np.array([[4, 0, 1], [0, 5, 0], [0, 0, 0]])
        r = derive_report(ConfusionMatrix(counts, CLASSES))
        assert not r.present[2]
        assert r.mean_iou == pytest.approx((4 / 5 + 5 / 5) / 2)
        assert "c.present=0" in r.to_keyvalue()

    def test_zero_precision_recall_gives_zero_f1(self):
        r = derive_report(ConfusionMatrix(np.array([[0, 3], [2, 0]]), ("x", "y")))
        assert r.f1[0] == 0.0

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.int64, (3, 3), elements=st.integers(0, 50)))
    def test_identities(self, counts):
        if counts.sum() == 0:
            return
        r = derive_report(ConfusionMatrix(counts, CLASSES))
        for c in range(3):
            p, rc, f, i = r.precision[c], r.recall[c], r.f1[c], r.iou[c]
            assert 0 <= f <= min(2 * p, 2 * rc) + 1e-12
            assert i <= f / (2 - f) + 1e-12 if f < 2 else True
        perm = [2, 0, 1]
        permuted = counts[np.ix_(perm, perm)]
        assert derive_report(ConfusionMatrix(permuted, CLASSES)).overall_accuracy == \
            pytest.approx(r.overall_accuracy)


def test_instance_iou():
    gt = np.zeros((10, 20), bool)
    gt[2:6, 2:6] = True
    gt[2:6, 12:16] = True
    pred = np.zeros((10, 20), bool)
    pred[2:6, 2:6] = True
    pred[4:8, 12:16] = True
    ious = instance_iou(connected_components(gt), connected_components(pred))
    assert ious == pytest.approx([1.0, 8 / 24])
