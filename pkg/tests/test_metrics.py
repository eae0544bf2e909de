"""Losses and evaluation protocols against brute-force evaluations."""

import numpy as np
import pytest

from toflab.errors import ContractError, DegenerateInputError, DimensionError
from toflab.imaging import sobel
from toflab.metrics import (
    aepe,
    depth_loss,
    depth_loss_gradient,
    flow_loss_multiscale,
    quantile_mae,
)


def brute_force_aepe(pred, gt, mask):
    total, n = 0.0, 0
    h, w = mask.shape
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                du = pred[y, x, 0] - gt[y, x, 0]
                dv = pred[y, x, 1] - gt[y, x, 1]
                total += np.sqrt(du * du + dv * dv)
                n += 1
    return total / n


def brute_force_depth_loss(pred, gt, mask, lam):
    g_x_p, g_y_p = sobel(pred)
    g_x_g, g_y_g = sobel(gt)
    data = grad = 0.0
    n = int(mask.sum())
    h, w = mask.shape
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                data += abs(pred[y, x] - gt[y, x])
                grad += abs(g_x_p[y, x] - g_x_g[y, x]) + abs(g_y_p[y, x] - g_y_g[y, x])
    return data / n + lam * grad / n, data / n, grad / n


class TestAepe:
    def test_identical(self, rng):
        flow = rng.uniform(-3, 3, size=(5, 5, 2))
        assert aepe(flow, flow) == 0.0

    def test_345(self, rng):
        gt = rng.uniform(-3, 3, size=(6, 6, 2))
        assert aepe(gt + np.array([3.0, 4.0]), gt) == pytest.approx(5.0, rel=1e-12)

    def test_mask_excludes(self, rng):
        gt = rng.uniform(size=(4, 4, 2))
        pred = gt.copy()
        pred[0, 0] += 100.0
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        assert aepe(pred, gt, mask) == 0.0

    def test_empty_mask(self, rng):
        flow = rng.uniform(size=(3, 3, 2))
        with pytest.raises(DegenerateInputError):
            aepe(flow, flow, np.zeros((3, 3), dtype=bool))

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            aepe(np.zeros((3, 3, 2)), np.zeros((3, 4, 2)))


class TestFlowLoss:
    def test_zero_residual(self, rng):
        flows = [rng.uniform(size=(8 // (2**s), 8 // (2**s), 2)) for s in range(3)]
        assert flow_loss_multiscale(flows, [f.copy() for f in flows]) == 0.0

    def test_single_scale_constant_error(self):
        gt = np.zeros((4, 4, 2))
        pred = np.ones((4, 4, 2))
        # per-pixel L1 of (1, 1) is 2; averaged it stays 2
        assert flow_loss_multiscale([pred], [gt], [1.0]) == pytest.approx(2.0)

    def test_linear_in_weights(self, rng):
        preds = [rng.uniform(size=(6, 6, 2)), rng.uniform(size=(3, 3, 2))]
        gts = [rng.uniform(size=(6, 6, 2)), rng.uniform(size=(3, 3, 2))]
        base = flow_loss_multiscale(preds, gts, [1.0, 0.5])
        doubled = flow_loss_multiscale(preds, gts, [2.0, 1.0])
        assert doubled == pytest.approx(2.0 * base, rel=1e-12)

    def test_scale_mismatch(self, rng):
        with pytest.raises(ContractError):
            flow_loss_multiscale([np.zeros((4, 4, 2))], [np.zeros((4, 4, 2))] * 2)

    def test_masked(self, rng):
        pred = rng.uniform(size=(4, 4, 2))
        gt = pred.copy()
        gt[2, 2] += 7.0
        mask = np.ones((4, 4), dtype=bool)
        mask[2, 2] = False
        assert flow_loss_multiscale([pred], [gt], masks=[mask]) == 0.0


class TestDepthLoss:
    def test_identity(self, rng):
        d = rng.uniform(size=(5, 5))
        assert depth_loss(d, d) == (0.0, 0.0, 0.0)

    def test_constant_offset(self, rng):
        # dyadic values keep pred - gt exactly constant in floating point
        gt = rng.integers(16, 32, size=(6, 6)) / 8.0
        total, data, grad = depth_loss(gt + 0.25, gt)
        # replicate padding makes the Sobel of a constant exactly zero
        assert data == pytest.approx(0.25, rel=1e-12)
        assert grad == 0.0
        assert total == pytest.approx(0.25, rel=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0.5, 3.0, size=(4, 4))
        gt = rng.uniform(0.5, 3.0, size=(4, 4))
        mask = rng.uniform(size=(4, 4)) > 0.3
        got = depth_loss(pred, gt, mask, lam=10.0)
        want = brute_force_depth_loss(pred, gt, mask, lam=10.0)
        assert got[0] == pytest.approx(want[0], rel=1e-12)
        assert got[1] == pytest.approx(want[1], rel=1e-12)
        assert got[2] == pytest.approx(want[2], rel=1e-12)

    def test_one_homogeneous(self, rng):
        gt = rng.uniform(1.0, 2.0, size=(6, 6))
        delta = rng.uniform(-0.2, 0.2, size=(6, 6))
        t1, _, _ = depth_loss(gt + delta, gt)
        t3, _, _ = depth_loss(gt + 3.0 * delta, gt)
        assert t3 == pytest.approx(3.0 * t1, rel=1e-12)

    def test_masked_values_irrelevant(self, rng):
        gt = rng.uniform(1.0, 2.0, size=(5, 5))
        pred = gt.copy()
        mask = np.ones((5, 5), dtype=bool)
        mask[0, :] = False
        pred2 = pred.copy()
        pred2[0, :] = 99.0
        # data term ignores masked rows; the gradient term sees them through
        # the Sobel window, so only compare the data parts here
        assert depth_loss(pred2, gt, mask)[1] == depth_loss(pred, gt, mask)[1]

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        pred = rng.uniform(1.0, 2.0, size=(6, 6))
        gt = rng.uniform(1.0, 2.0, size=(6, 6))
        mask = rng.uniform(size=(6, 6)) > 0.2
        grad = depth_loss_gradient(pred, gt, mask, lam=10.0)
        eps = 1e-7
        numeric = np.zeros_like(grad)
        for i in range(pred.size):
            plus = pred.ravel().copy()
            plus[i] += eps
            minus = pred.ravel().copy()
            minus[i] -= eps
            lp, _, _ = depth_loss(plus.reshape(6, 6), gt, mask, lam=10.0)
            lm, _, _ = depth_loss(minus.reshape(6, 6), gt, mask, lam=10.0)
            numeric.flat[i] = (lp - lm) / (2 * eps)
        assert np.max(np.abs(grad - numeric)) < 1e-6

    def test_empty_mask(self, rng):
        d = rng.uniform(size=(3, 3))
        with pytest.raises(DegenerateInputError):
            depth_loss(d, d, np.zeros((3, 3), dtype=bool))


def brute_force_quantiles(input_depth, pred, gt, mask, range_limit):
    entries = []
    h, w = gt.shape
    for y in range(h):
        for x in range(w):
            if mask[y, x] and gt[y, x] < range_limit:
                entries.append((abs(input_depth[y, x] - gt[y, x]),
                                y * w + x,
                                abs(pred[y, x] - gt[y, x])))
    entries.sort()
    errs = [e[2] for e in entries]
    n = len(errs)
    q1, q2, q3 = n // 4, n // 2, (3 * n) // 4
    return (float(np.mean(errs[:q1])), float(np.mean(errs[q1:q2])),
            float(np.mean(errs[q2:q3])), float(np.mean(errs)))


class TestQuantileMae:
    def test_perfect_prediction(self, rng):
        gt = rng.uniform(0.5, 3.0, size=(6, 6))
        rep = quantile_mae(gt + rng.uniform(size=(6, 6)), gt, gt)
        assert rep.mae_low == rep.mae_mid == rep.mae_high == rep.mae_all == 0.0

    def test_eight_pixel_fixture(self):
        # input errors 1..8, prediction errors equal to input errors:
        # classes {1,2} {3,4} {5,6} {7,8} -> 1.5 / 3.5 / 5.5
        gt = np.zeros((2, 4)) + 1.0
        input_depth = gt + np.arange(1.0, 9.0).reshape(2, 4)
        pred = input_depth.copy()
        rep = quantile_mae(input_depth, pred, gt, range_limit=100.0)
        assert rep.mae_low == pytest.approx(1.5)
        assert rep.mae_mid == pytest.approx(3.5)
        assert rep.mae_high == pytest.approx(5.5)
        assert rep.mae_all == pytest.approx(4.5)
        assert rep.outlier_fraction == pytest.approx(0.25)

    def test_range_gate(self, rng):
        gt = np.full((4, 4), 1.0)
        gt[0, 0] = 10.0  # beyond the limit, must not influence any class
        input_depth = gt + rng.uniform(0.1, 0.5, size=(4, 4))
        pred = gt + 0.1
        rep = quantile_mae(input_depth, pred, gt, range_limit=4.0)
        input2 = input_depth.copy()
        input2[0, 0] = 1e6  # arbitrarily bad input error on the gated pixel
        rep2 = quantile_mae(input2, pred, gt, range_limit=4.0)
        assert rep2 == rep

    @pytest.mark.parametrize("seed", range(4))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        gt = rng.uniform(0.5, 5.0, size=(6, 7))
        input_depth = gt + rng.normal(0, 0.5, size=gt.shape)
        pred = gt + rng.normal(0, 0.2, size=gt.shape)
        mask = rng.uniform(size=gt.shape) > 0.2
        rep = quantile_mae(input_depth, pred, gt, mask, range_limit=4.0)
        low, mid, high, total = brute_force_quantiles(input_depth, pred, gt, mask, 4.0)
        assert rep.mae_low == pytest.approx(low, rel=1e-12)
        assert rep.mae_mid == pytest.approx(mid, rel=1e-12)
        assert rep.mae_high == pytest.approx(high, rel=1e-12)
        assert rep.mae_all == pytest.approx(total, rel=1e-12)

    def test_partition_sizes_balanced(self, rng):
        for n_extra in range(4):
            h, w = 3, 4 + n_extra
            gt = np.full((h, w), 1.0)
            input_depth = gt + rng.uniform(0.1, 1.0, size=(h, w))
            rep = quantile_mae(input_depth, gt, gt, range_limit=10.0)
            n = h * w
            sizes = [n // 4, n // 2 - n // 4, (3 * n) // 4 - n // 2, n - (3 * n) // 4]
            assert max(sizes) - min(sizes) <= 1
            assert rep.outlier_fraction == pytest.approx(sizes[-1] / n)

    def test_too_few_pixels(self):
        gt = np.full((1, 3), 1.0)
        with pytest.raises(DegenerateInputError):
            quantile_mae(gt, gt, gt)
