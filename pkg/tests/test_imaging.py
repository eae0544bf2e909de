"""Bilinear sampling, warping, warp gradients and the Sobel operator."""

import numpy as np
import pytest

from toflab.errors import ContractError, DimensionError
from toflab.imaging import (
    SOBEL_X,
    SOBEL_Y,
    ensure_image,
    ensure_mask,
    sample_bilinear,
    sobel,
    sobel_adjoint,
    warp_gradient,
    warp_image,
)


def ramp_x(h, w):
    """I(x, y) = x."""
    return np.tile(np.arange(w, dtype=np.float64), (h, 1))


def zero_flow(h, w):
    return np.zeros((h, w, 2))


def const_flow(h, w, u, v):
    flow = np.zeros((h, w, 2))
    flow[:, :, 0] = u
    flow[:, :, 1] = v
    return flow


class TestEnsure:
    def test_rejects_nan(self):
        img = np.ones((3, 3))
        img[1, 1] = np.nan
        with pytest.raises(ContractError):
            ensure_image(img)

    def test_rejects_inf(self):
        img = np.ones((3, 3))
        img[0, 2] = np.inf
        with pytest.raises(ContractError):
            ensure_image(img)

    def test_channel_contract(self):
        with pytest.raises(ContractError):
            ensure_image(np.ones((3, 3, 2)), channels=1)

    def test_mask_binary(self):
        with pytest.raises(ContractError):
            ensure_mask(np.full((2, 2), 0.5))
        out = ensure_mask(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert out.dtype == np.bool_


class TestSampleBilinear:
    def test_constant_image(self, rng):
        img = np.full((5, 6), 3.25)
        for _ in range(20):
            x = rng.uniform(0, 5)
            y = rng.uniform(0, 4)
            value, ok = sample_bilinear(img, x, y)
            assert ok
            assert value == pytest.approx(3.25, abs=1e-14)

    def test_integer_coordinates(self, rng):
        img = rng.uniform(size=(7, 8))
        value, ok = sample_bilinear(img, 3, 5)
        assert ok
        assert value == img[5, 3]

    def test_ramp_half_pixel(self):
        # bilinear weights on I(x, y) = x at x = 2.5: 0.5 * 2 + 0.5 * 3 = 2.5
        img = ramp_x(4, 6)
        value, ok = sample_bilinear(img, 2.5, 1.0)
        assert ok
        assert value == pytest.approx(2.5, abs=1e-14)

    def test_out_of_bounds_flagged(self):
        img = np.ones((4, 4))
        _, ok = sample_bilinear(img, -0.5, 1.0)
        assert not ok
        _, ok = sample_bilinear(img, 3.0, 3.0)
        assert ok  # the far corner itself is still inside

    def test_multichannel_value(self):
        img = np.stack([np.full((3, 3), 1.0), np.full((3, 3), 2.0)], axis=-1)
        value, ok = sample_bilinear(img, 1.2, 1.7)
        assert ok
        assert np.allclose(value, [1.0, 2.0])


class TestWarpImage:
    def test_zero_flow_identity(self, rng):
        img = rng.uniform(size=(6, 9))
        out, valid = warp_image(img, zero_flow(6, 9))
        assert np.array_equal(out, img)
        assert valid.all()

    def test_unit_shift_ramp(self):
        # shift oracle: sampling at x + 1 on a ramp gives x + 1
        img = ramp_x(5, 7)
        out, valid = warp_image(img, const_flow(5, 7, 1.0, 0.0))
        assert np.array_equal(out[:, :-1], img[:, 1:])
        assert valid[:, :-1].all()
        assert not valid[:, -1].any()

    def test_half_shift_ramp(self):
        img = ramp_x(5, 7)
        out, valid = warp_image(img, const_flow(5, 7, 0.5, 0.0))
        expected = np.arange(7) + 0.5
        assert np.allclose(out[:, :-1], np.tile(expected[:-1], (5, 1)), atol=1e-14)
        assert not valid[:, -1].any()

    def test_linearity_in_image(self, rng):
        a, b = 1.7, -0.4
        img1 = rng.uniform(size=(8, 8))
        img2 = rng.uniform(size=(8, 8))
        flow = rng.uniform(-2, 2, size=(8, 8, 2))
        mixed, valid = warp_image(a * img1 + b * img2, flow)
        w1, _ = warp_image(img1, flow)
        w2, _ = warp_image(img2, flow)
        assert np.allclose(mixed[valid], (a * w1 + b * w2)[valid], atol=1e-12)

    def test_zero_boundary_policy(self):
        img = np.ones((4, 4))
        out, valid = warp_image(img, const_flow(4, 4, 10.0, 0.0), boundary="zero")
        assert not valid.any()
        assert np.all(out == 0.0)

    def test_clamp_boundary_policy(self):
        img = ramp_x(4, 4)
        out, valid = warp_image(img, const_flow(4, 4, 10.0, 0.0))
        assert not valid.any()
        assert np.all(out == 3.0)  # clamped to the last column

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            warp_image(np.ones((4, 4)), zero_flow(4, 5))

    def test_unknown_policy(self):
        with pytest.raises(ContractError):
            warp_image(np.ones((4, 4)), zero_flow(4, 4), boundary="wrap")

    def test_matches_scalar_sampler(self, rng):
        img = rng.uniform(size=(6, 6))
        flow = rng.uniform(-2, 2, size=(6, 6, 2))
        out, valid = warp_image(img, flow)
        for y in range(6):
            for x in range(6):
                value, ok = sample_bilinear(img, x + flow[y, x, 0], y + flow[y, x, 1])
                assert out[y, x] == pytest.approx(value, abs=1e-14)
                assert valid[y, x] == ok


class TestWarpGradient:
    def test_constant_image_zero_gradient(self, rng):
        img = np.full((6, 6), 2.5)
        flow = rng.uniform(-1, 1, size=(6, 6, 2))
        d_du, d_dv = warp_gradient(img, flow)
        assert np.allclose(d_du, 0.0, atol=1e-14)
        assert np.allclose(d_dv, 0.0, atol=1e-14)

    def test_ramp_unit_gradient(self):
        img = ramp_x(6, 8)
        flow = const_flow(6, 8, 0.3, 0.2)
        d_du, d_dv = warp_gradient(img, flow)
        interior = np.s_[1:-1, 1:-1]
        assert np.allclose(d_du[interior], 1.0, atol=1e-13)
        assert np.allclose(d_dv[interior], 0.0, atol=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_difference_oracle(self, seed):
        # central differences at eps=1e-6 on positions with fractional parts
        # inside (0.1, 0.9), where the bilinear form is smooth
        rng = np.random.default_rng(seed)
        img = rng.uniform(size=(8, 8))
        base = rng.uniform(-2.0, 2.0, size=(8, 8, 2))
        flow = np.floor(base) + 0.1 + 0.8 * rng.uniform(size=(8, 8, 2))
        d_du, d_dv = warp_gradient(img, flow)
        eps = 1e-6
        for comp, analytic in ((0, d_du), (1, d_dv)):
            plus = flow.copy()
            plus[:, :, comp] += eps
            minus = flow.copy()
            minus[:, :, comp] -= eps
            numeric = (warp_image(img, plus)[0] - warp_image(img, minus)[0]) / (2 * eps)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-2)
            assert np.max(np.abs(analytic - numeric) / denom) < 1e-6

    def test_size_mismatch(self):
        with pytest.raises(DimensionError):
            warp_gradient(np.ones((4, 4)), zero_flow(5, 4))


def brute_force_correlate3(img, kernel):
    """Replicate-padded 3x3 cross-correlation, straight from the definition."""
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += kernel[dy + 1, dx + 1] * img[yy, xx]
            out[y, x] = acc
    return out


class TestSobel:
    def test_constant_zero(self):
        g_x, g_y = sobel(np.full((5, 5), 7.0))
        assert np.all(g_x == 0.0)
        assert np.all(g_y == 0.0)

    def test_ramp_interior(self):
        # correlating the x-kernel with I = x sums to (1+2+1) * 2 = 8
        g_x, g_y = sobel(ramp_x(6, 7))
        assert np.allclose(g_x[1:-1, 1:-1], 8.0)
        assert np.allclose(g_y[1:-1, 1:-1], 0.0)

    def test_vertical_step_localized(self):
        img = np.zeros((6, 8))
        img[:, 4:] = 1.0
        g_x, _ = sobel(img)
        assert np.allclose(g_x, brute_force_correlate3(img, SOBEL_X))
        inner = g_x[1:-1]
        assert np.all(inner[:, [3, 4]] > 0.0)  # response on the step columns
        assert np.allclose(inner[:, [0, 1, 6, 7]], 0.0)

    @pytest.mark.parametrize("seed", range(3))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        img = rng.uniform(size=(7, 9))
        g_x, g_y = sobel(img)
        assert np.allclose(g_x, brute_force_correlate3(img, SOBEL_X), atol=1e-12)
        assert np.allclose(g_y, brute_force_correlate3(img, SOBEL_Y), atol=1e-12)

    def test_linearity(self, rng):
        img1 = rng.uniform(size=(6, 6))
        img2 = rng.uniform(size=(6, 6))
        gx_mix, _ = sobel(2.0 * img1 - 3.0 * img2)
        gx1, _ = sobel(img1)
        gx2, _ = sobel(img2)
        assert np.allclose(gx_mix, 2.0 * gx1 - 3.0 * gx2, atol=1e-11)

    def test_multichannel_rejected(self):
        with pytest.raises(ContractError):
            sobel(np.ones((4, 4, 3)))

    def test_adjoint_identity(self, rng):
        # <S x, z> == <x, S^T z> for random x, z
        x = rng.uniform(size=(6, 7))
        z_x = rng.uniform(size=(6, 7))
        z_y = rng.uniform(size=(6, 7))
        g_x, g_y = sobel(x)
        lhs = np.sum(g_x * z_x) + np.sum(g_y * z_y)
        rhs = np.sum(x * sobel_adjoint(z_x, z_y))
        assert lhs == pytest.approx(rhs, rel=1e-12)
