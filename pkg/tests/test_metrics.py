import itertools

import numpy as np
import pytest

from forgeryttt import metrics
from forgeryttt.errors import AUCUndefinedError, ShapeError, UnsupportedDistortionError


def brute_f1(pred, gt, t):
    tp = fp = fn = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        if p > t and g:
            tp += 1
        elif p > t:
            fp += 1
        elif g:
            fn += 1
    if tp + fn == 0:
        return 1.0 if fp == 0 else 0.0
    return 2 * tp / (2 * tp + fp + fn)


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


class TestF1:
    def test_exact_prediction(self):
        gt = np.zeros((8, 8), np.uint8)
        gt[2:5, 3:6] = 1
        for t in (0.1, 0.5, 0.9):
            assert metrics.f1_at_threshold(gt.astype(float), gt, t) == 1.0

    def test_disjoint(self):
        gt = np.zeros((4, 4))
        gt[0, 0] = 1
        pred = np.zeros((4, 4))
        pred[3, 3] = 1
        assert metrics.f_fix(pred, gt) == 0.0

    def test_hand_confusion(self):
        gt = np.zeros((4, 4))
        gt[0, 0:4] = 1
        pred = np.zeros((4, 4))
        pred[0, 0:2] = 0.9
        pred[3, 0:2] = 0.9
        assert metrics.f_fix(pred, gt) == pytest.approx(0.5)

    def test_empty_gt_conventions(self):
        gt = np.zeros((4, 4))
        assert metrics.f_fix(np.zeros((4, 4)), gt) == 1.0
        assert metrics.f_fix(np.ones((4, 4)), gt) == 0.0
        assert metrics.f_best(np.zeros((4, 4)), gt) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.f_fix(np.zeros((4, 4)), np.zeros((4, 5)))
        with pytest.raises(ShapeError):
            metrics.f_best(np.zeros((4, 4)), np.zeros((4, 5)))

    def test_random_against_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            pred = rng.random((8, 8))
            gt = rng.random((8, 8)) < rng.uniform(0.05, 0.6)
            t = rng.random()
            assert metrics.f1_at_threshold(pred, gt, t) == brute_f1(pred, gt, t)

    def test_binary_prediction_best_equals_fixed(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pred = (rng.random((8, 8)) > 0.5).astype(float)
            gt = rng.random((8, 8)) > 0.5
            assert metrics.f_best(pred, gt) == metrics.f_fix(pred, gt)

    def test_best_at_least_fixed(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            pred, gt = rng.random((8, 8)), rng.random((8, 8)) > 0.7
            assert metrics.f_best(pred, gt) >= metrics.f_fix(pred, gt)

    def test_best_matches_unique_value_sweep_on_grid_aligned_scores(self):
        # scores at bin centres (k + 0.5)/256 put a grid threshold between every pair of distinct values
        rng = np.random.default_rng(3)
        for _ in range(100):
            pred = (rng.permutation(256)[:64].reshape(8, 8) + 0.5) / 256
            gt = rng.random((8, 8)) < 0.3
            candidates = [-np.inf] + sorted(np.unique(pred))
            exact = max(brute_f1(pred, gt, t) for t in candidates)
            assert metrics.f_best(pred, gt) == exact

    def test_curve_matches_per_threshold_loop(self):
        rng = np.random.default_rng(4)
        pred, gt = rng.random((8, 8)), rng.random((8, 8)) < 0.4
        curve = metrics.f1_curve(pred, gt)
        for k in range(0, 256, 17):
            assert curve[k] == brute_f1(pred, gt, k / 256)


class TestImageLevel:
    def test_perfect_separation(self):
        auc, acc = metrics.image_level_metrics([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert auc == 1.0 and acc == 1.0

    def test_all_ties(self):
        auc, _ = metrics.image_level_metrics([0.3] * 6, [1, 0, 1, 0, 1, 0])
        assert auc == 0.5

    def test_hand(self):
        auc, acc = metrics.image_level_metrics([0.9, 0.4, 0.6, 0.1], [1, 0, 1, 0])
        assert auc == 1.0 and acc == 1.0

    def test_single_class(self):
        with pytest.raises(AUCUndefinedError) as err:
            metrics.image_level_metrics([0.9, 0.2], [1, 1])
        assert err.value.acc == 0.5

    def test_balanced_accuracy(self):
        # TPR 2/3, TNR 1/1
        assert metrics.balanced_accuracy([0.9, 0.8, 0.1, 0.2], [1, 1, 1, 0]) == pytest.approx(5 / 6)

    def test_auc_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(2, 13))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.random(n), 1)  # coarse values create ties
            assert abs(metrics.auc(scores, labels) - brute_auc(scores, labels)) < 1e-12

    def test_image_score_is_max(self):
        pred = np.zeros((4, 4))
        pred[1, 2] = 0.7
        assert metrics.image_score(pred) == pytest.approx(0.7)


class TestDistort:
    def img(self, seed=0):
        return np.random.default_rng(seed).random((32, 32, 3)).astype(np.float32)

    def test_noise_zero_identity(self):
        x = self.img()
        assert np.array_equal(metrics.distort(x, "noise:0"), x)

    def test_blur_constant(self):
        x = np.full((16, 16, 3), 0.37, np.float32)
        np.testing.assert_allclose(metrics.distort(x, "blur:3"), x, atol=1e-6)

    def test_jpeg_100_mid_gray(self):
        x = np.full((32, 32, 3), 128 / 255, np.float32)
        assert np.abs(metrics.distort(x, "jpeg:100") - x).max() <= 2 / 255

    @pytest.mark.parametrize("d", metrics.DISTORTION_SUITE, ids=str)
    def test_shape_range_determinism(self, d):
        x = self.img(1)
        a = metrics.distort(x, d, seed=3)
        b = metrics.distort(x, d, seed=3)
        assert a.shape == x.shape and a.min() >= 0 and a.max() <= 1
        assert np.array_equal(a, b)
        assert not np.array_equal(a, x)

    def test_noise_scale(self):
        x = np.full((200, 200, 3), 0.5, np.float32)
        sd = float((metrics.distort(x, "noise:5", seed=1) - x).std())
        assert sd == pytest.approx(5 / 255, rel=0.02)

    @pytest.mark.parametrize("spec", ["blur:7", "noise:4", "jpeg:75", "sharpen:1", "jpeg"])
    def test_unsupported(self, spec):
        with pytest.raises(UnsupportedDistortionError):
            metrics.distort(self.img(), spec)
