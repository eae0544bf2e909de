"""Per-pixel kernel filtering: variants, oracle equivalence, gradients, fit."""

import numpy as np
import pytest

from toflab.errors import ContractError, DegenerateInputError, DimensionError, DivergenceError
from toflab.gradcheck import check_kpn
from toflab.kpn import (
    DirectFitConfig,
    KernelField,
    KpnVariant,
    apply,
    apply_gradient,
    apply_vjp,
    direct_fit,
    extract_patches,
    normalize_kernels,
)

ALL_VARIANTS = list(KpnVariant)


def brute_force_apply(depth, weights, bias, variant):
    """Per-pixel dot products straight from the definition (replicate pad)."""
    h, w = depth.shape
    k2 = weights.shape[2]
    k = int(round(np.sqrt(k2)))
    pad = k // 2
    base = depth + bias if variant.bias_mode == 1 else depth
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            wv = weights[y, x].astype(np.float64)
            if variant.normalize:
                wv = wv / (np.sum(np.abs(wv)) + 1e-12)
            acc = 0.0
            slot = 0
            for dy in range(-pad, pad + 1):
                for dx in range(-pad, pad + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += wv[slot] * base[yy, xx]
                    slot += 1
            if variant.bias_mode == 2:
                acc += bias[y, x]
            out[y, x] = acc
    return out


def random_field(rng, h, w, k=3, away_from_zero=False):
    lo = 0.1 if away_from_zero else 0.0
    weights = rng.uniform(lo, 1.0, size=(h, w, k * k))
    weights *= rng.choice([-1.0, 1.0], size=weights.shape)
    bias = rng.uniform(-0.5, 0.5, size=(h, w))
    return KernelField(weights=weights, bias=bias)


class TestPatches:
    def test_unit_window_is_identity(self, rng):
        img = rng.uniform(size=(5, 6))
        patches = extract_patches(img, 1)
        assert np.array_equal(patches[:, :, 0], img)

    def test_ramp_center_enumeration(self):
        img = np.arange(9, dtype=np.float64).reshape(3, 3)
        patches = extract_patches(img, 3)
        # center pixel sees the whole image in row-major order
        assert np.array_equal(patches[1, 1], np.arange(9.0))

    def test_constant(self):
        patches = extract_patches(np.full((4, 4), 2.5), 3)
        assert np.all(patches == 2.5)

    def test_replicated_corner(self):
        img = np.arange(9, dtype=np.float64).reshape(3, 3)
        patches = extract_patches(img, 3)
        # top-left corner: rows/cols clamp to the edge
        assert np.array_equal(patches[0, 0], np.array([0, 0, 1, 0, 0, 1, 3, 3, 4.0]))

    def test_even_k_rejected(self):
        with pytest.raises(ContractError):
            extract_patches(np.ones((4, 4)), 2)


class TestNormalize:
    def test_delta_unchanged(self):
        kf = KernelField.identity((3, 3))
        out = normalize_kernels(kf)
        assert np.allclose(out.weights, kf.weights, atol=1e-11)

    def test_all_ones(self):
        kf = KernelField(weights=np.ones((2, 2, 9)), bias=np.zeros((2, 2)))
        out = normalize_kernels(kf)
        assert np.allclose(out.weights, 1.0 / 9.0, atol=1e-12)

    def test_signed_pair(self):
        weights = np.zeros((1, 1, 9))
        weights[0, 0, 0] = -2.0
        weights[0, 0, 1] = 2.0
        out = normalize_kernels(KernelField(weights=weights, bias=np.zeros((1, 1))))
        assert out.weights[0, 0, 0] == pytest.approx(-0.5, abs=1e-12)
        assert out.weights[0, 0, 1] == pytest.approx(0.5, abs=1e-12)
        assert np.allclose(out.weights[0, 0, 2:], 0.0)

    def test_unit_l1_invariant(self, rng):
        weights = rng.standard_normal((8, 8, 9))
        out = normalize_kernels(KernelField(weights=weights, bias=np.zeros((8, 8))))
        sums = np.sum(np.abs(out.weights), axis=-1)
        assert np.max(np.abs(sums - 1.0)) <= 1e-12

    def test_all_zero_guarded(self):
        kf = KernelField(weights=np.zeros((2, 2, 9)), bias=np.zeros((2, 2)))
        out = normalize_kernels(kf)
        assert np.all(np.isfinite(out.weights))
        assert np.all(out.weights == 0.0)


class TestApply:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_delta_identity(self, variant, rng):
        depth = rng.uniform(0.5, 4.0, size=(6, 7))
        kf = KernelField.identity(depth.shape)
        out = apply(depth, kf, variant)
        assert np.allclose(out, depth, rtol=1e-11)

    def test_delta_with_bias_shifts(self, rng):
        depth = rng.uniform(0.5, 4.0, size=(5, 5))
        kf = KernelField.identity(depth.shape)
        kf.bias[:] = 0.7
        bias_first = apply(depth, kf, KpnVariant.NORM_BIAS_FIRST)
        bias_after = apply(depth, kf, KpnVariant.VANILLA)
        assert np.allclose(bias_first, depth + 0.7, rtol=1e-11)
        assert np.allclose(bias_after, depth + 0.7, rtol=1e-12)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    @pytest.mark.parametrize("seed", range(4))
    def test_brute_force_oracle(self, variant, seed):
        rng = np.random.default_rng(seed)
        h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        depth = rng.uniform(0.5, 4.0, size=(h, w))
        kf = random_field(rng, h, w)
        out = apply(depth, kf, variant)
        oracle = brute_force_apply(depth, kf.weights, kf.bias, variant)
        assert np.max(np.abs(out - oracle)) < 1e-12

    def test_scale_invariance_of_normalized_variants(self, rng):
        depth = rng.uniform(0.5, 4.0, size=(6, 6))
        kf = random_field(rng, 6, 6, away_from_zero=True)
        scaled = KernelField(weights=kf.weights.copy(), bias=kf.bias.copy())
        scaled.weights[2, 3] *= 3.7
        for variant in (KpnVariant.NORM_BIAS_FIRST, KpnVariant.AFT_BIAS, KpnVariant.NO_BIAS):
            a = apply(depth, kf, variant)
            b = apply(depth, scaled, variant)
            assert np.max(np.abs(a - b)) < 1e-11

    def test_shift_equivariance_positive_kernels(self, rng):
        # sign-definite kernels normalize to sum +1, so constants pass through
        depth = rng.uniform(0.5, 4.0, size=(6, 6))
        weights = rng.uniform(0.2, 1.0, size=(6, 6, 9))
        kf = KernelField(weights=weights, bias=rng.uniform(-0.2, 0.2, size=(6, 6)))
        a = apply(depth + 0.9, kf, KpnVariant.NORM_BIAS_FIRST)
        b = apply(depth, kf, KpnVariant.NORM_BIAS_FIRST) + 0.9
        assert np.max(np.abs(a - b)) < 1e-11

    def test_variant_coincidences(self, rng):
        depth = rng.uniform(0.5, 4.0, size=(5, 5))
        delta = KernelField.identity(depth.shape)
        delta.bias[:] = rng.uniform(-0.3, 0.3, size=depth.shape)
        outs = [apply(depth, delta, v) for v in ALL_VARIANTS]
        # with delta kernels all bias-carrying variants coincide, and the
        # no-bias ones coincide with each other
        with_bias = [o for o, v in zip(outs, ALL_VARIANTS) if v.bias_mode != 0]
        without = [o for o, v in zip(outs, ALL_VARIANTS) if v.bias_mode == 0]
        for o in with_bias[1:]:
            assert np.allclose(o, with_bias[0], rtol=1e-11)
        for o in without[1:]:
            assert np.allclose(o, without[0], rtol=1e-11)
        # vanilla equals no-norm-no-bias when the bias vanishes
        kf = random_field(rng, 5, 5)
        kf.bias[:] = 0.0
        assert np.allclose(
            apply(depth, kf, KpnVariant.VANILLA),
            apply(depth, kf, KpnVariant.NO_NORM_NO_BIAS),
            rtol=1e-12,
        )

    def test_size_mismatch(self, rng):
        kf = KernelField.identity((4, 4))
        with pytest.raises(DimensionError):
            apply(np.ones((4, 5)), kf)


class TestGradients:
    def test_vanilla_bias_is_identity(self, rng):
        depth = rng.uniform(0.5, 4.0, size=(4, 4))
        kf = random_field(rng, 4, 4)
        grads = apply_gradient(depth, kf, KpnVariant.VANILLA)
        assert np.array_equal(grads.dense_bias_jacobian(), np.eye(16))

    def test_tofkpn_bias_slots_are_normalized_weights(self, rng):
        depth = rng.uniform(0.5, 4.0, size=(4, 4))
        kf = random_field(rng, 4, 4, away_from_zero=True)
        grads = apply_gradient(depth, kf, KpnVariant.NORM_BIAS_FIRST)
        denom = np.sum(np.abs(kf.weights), axis=-1, keepdims=True) + 1e-12
        assert np.allclose(grads.d_bias_slots, kf.weights / denom, atol=1e-13)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_finite_difference_oracle(self, variant):
        assert check_kpn(7, eps=1e-6, variant=variant) < 1e-5

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_vjp_consistent_with_dense_jacobians(self, variant, rng):
        depth = rng.uniform(0.5, 4.0, size=(4, 5))
        kf = random_field(rng, 4, 5, away_from_zero=True)
        cotangent = rng.standard_normal((4, 5))
        g_w, g_b, g_d = apply_vjp(depth, kf, variant, cotangent)
        grads = apply_gradient(depth, kf, variant)
        assert np.allclose(g_w, grads.d_weights * cotangent[:, :, None], atol=1e-12)
        flat = cotangent.ravel()
        assert np.allclose(g_b.ravel(), flat @ grads.dense_bias_jacobian(), atol=1e-12)
        assert np.allclose(g_d.ravel(), flat @ grads.dense_depth_jacobian(), atol=1e-12)


class TestDirectFit:
    def test_already_optimal_terminates(self, rng):
        depth = rng.uniform(0.5, 4.0, size=(8, 8))
        result = direct_fit(depth, depth)
        assert result.final_loss < 1e-10  # at the normalization-guard floor
        assert len(result.trace) == 1  # identity start is already optimal

    def test_already_optimal_exact_without_normalization(self, rng):
        depth = rng.uniform(0.5, 4.0, size=(8, 8))
        result = direct_fit(depth, depth, variant=KpnVariant.VANILLA)
        assert result.final_loss == 0.0
        assert len(result.trace) == 1

    def test_constant_offset_converges_to_bias(self):
        rng = np.random.default_rng(0)
        depth = np.full((16, 16), 2.0) + 0.0 * rng.uniform(size=(16, 16))
        target = depth + 0.3
        result = direct_fit(depth, target, config=DirectFitConfig(iterations=500))
        assert result.final_loss < 1e-6
        assert np.allclose(result.kernel_field.bias, 0.3, atol=1e-6)

    def test_noisy_piecewise_improves(self):
        rng = np.random.default_rng(3)
        target = np.full((20, 20), 1.5)
        target[8:, :] = 2.5
        noisy = target + rng.normal(0.0, 0.05, size=target.shape)
        mask = np.ones(target.shape, dtype=bool)
        result = direct_fit(noisy, target, mask,
                            config=DirectFitConfig(iterations=200, step=0.02))
        refined = apply(noisy, result.kernel_field, KpnVariant.NORM_BIAS_FIRST)
        assert np.mean(np.abs(refined - target)[mask]) < np.mean(np.abs(noisy - target)[mask])

    def test_trace_non_increasing(self):
        rng = np.random.default_rng(5)
        depth = rng.uniform(1.0, 3.0, size=(10, 10))
        target = depth + rng.normal(0, 0.1, size=depth.shape)
        result = direct_fit(depth, target, config=DirectFitConfig(iterations=60))
        trace = np.asarray(result.trace)
        assert np.all(np.diff(trace) <= 1e-15)

    def test_divergence_raises_with_trace(self):
        # normalized variants bound the filter gain, so drive an
        # unnormalized variant with an absurd step to blow the loss up
        rng = np.random.default_rng(1)
        depth = rng.uniform(1.0, 3.0, size=(6, 6))
        cfg = DirectFitConfig(step=1e12, iterations=50, halve_on_increase=False)
        with pytest.raises(DivergenceError) as excinfo:
            direct_fit(depth, depth + 1.0, variant=KpnVariant.NO_NORM, config=cfg)
        assert len(excinfo.value.trace) >= 1

    def test_empty_mask_rejected(self, rng):
        depth = rng.uniform(1.0, 3.0, size=(4, 4))
        with pytest.raises(DegenerateInputError):
            direct_fit(depth, depth, np.zeros((4, 4), dtype=bool))
