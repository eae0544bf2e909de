"""Finite-difference verification of the analytic gradients.

Each check builds a seeded random instance, evaluates the closed-form
derivatives and compares them entrywise against central finite differences
at step ``eps``.  The relative error uses a small floor in the denominator
(``REL_FLOOR``) so that near-zero entries, whose finite differences are pure
roundoff, do not drown the comparison; entries of meaningful magnitude are
compared at full strictness.
"""

from __future__ import annotations

import numpy as np

from . import calib as calib_mod
from . import kpn
from .imaging import warp_gradient, warp_image

REL_FLOOR = 1e-2


def rel_err(analytic, numeric, floor=REL_FLOOR):
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _fractional_flow(rng, shape, lo=0.1, hi=0.9):
    """Flow whose sample positions keep fractional parts inside (lo, hi)."""
    base = rng.uniform(-2.0, 2.0, size=shape)
    return np.floor(base) + lo + (hi - lo) * rng.uniform(size=shape)


def check_warp(seed, eps=1e-6, size=(8, 8)):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.0, 1.0, size=size)
    flow = _fractional_flow(rng, size + (2,))
    d_du, d_dv = warp_gradient(img, flow)
    worst = 0.0
    for comp, analytic in ((0, d_du), (1, d_dv)):
        plus = flow.copy()
        plus[:, :, comp] += eps
        minus = flow.copy()
        minus[:, :, comp] -= eps
        numeric = (warp_image(img, plus)[0] - warp_image(img, minus)[0]) / (2.0 * eps)
        worst = max(worst, rel_err(analytic, numeric))
    return worst


def check_kpn(seed, eps=1e-6, variant=kpn.KpnVariant.NORM_BIAS_FIRST, size=(6, 6)):
    rng = np.random.default_rng(seed)
    h, w = size
    depth = rng.uniform(0.5, 4.0, size=size)
    # keep |w| away from 0: the L1 normalization kinks there
    weights = rng.uniform(0.1, 1.0, size=(h, w, 9)) * rng.choice([-1.0, 1.0], size=(h, w, 9))
    bias = rng.uniform(-0.5, 0.5, size=size)
    field = kpn.KernelField(weights=weights, bias=bias)
    grads = kpn.apply_gradient(depth, field, variant)
    worst = 0.0

    # weights are local to their pixel: one finite difference per slot
    numeric_w = np.empty_like(weights)
    for slot in range(9):
        plus = weights.copy()
        plus[:, :, slot] += eps
        minus = weights.copy()
        minus[:, :, slot] -= eps
        f_plus = kpn.apply(depth, kpn.KernelField(plus, bias), variant)
        f_minus = kpn.apply(depth, kpn.KernelField(minus, bias), variant)
        numeric_w[:, :, slot] = (f_plus - f_minus) / (2.0 * eps)
    worst = max(worst, rel_err(grads.d_weights, numeric_w))

    dense_bias = grads.dense_bias_jacobian()
    dense_depth = grads.dense_depth_jacobian()
    numeric_bias = np.empty_like(dense_bias)
    numeric_depth = np.empty_like(dense_depth)
    for q in range(h * w):
        b_plus = bias.ravel().copy()
        b_plus[q] += eps
        b_minus = bias.ravel().copy()
        b_minus[q] -= eps
        f_plus = kpn.apply(depth, kpn.KernelField(weights, b_plus.reshape(size)), variant)
        f_minus = kpn.apply(depth, kpn.KernelField(weights, b_minus.reshape(size)), variant)
        numeric_bias[:, q] = ((f_plus - f_minus) / (2.0 * eps)).ravel()
        d_plus = depth.ravel().copy()
        d_plus[q] += eps
        d_minus = depth.ravel().copy()
        d_minus[q] -= eps
        f_plus = kpn.apply(d_plus.reshape(size), field, variant)
        f_minus = kpn.apply(d_minus.reshape(size), field, variant)
        numeric_depth[:, q] = ((f_plus - f_minus) / (2.0 * eps)).ravel()
    worst = max(worst, rel_err(dense_bias, numeric_bias))
    worst = max(worst, rel_err(dense_depth, numeric_depth))
    return worst


def _calib_instance(rng, size=(6, 6)):
    depth = rng.uniform(0.5, 4.0, size=size)
    mask = rng.uniform(size=size) > 0.2
    mask.flat[:2] = True  # keep the system overdetermined
    t_x, c_x = rng.uniform(-40.0, 40.0), rng.uniform(-5.0, 5.0)
    t_y, c_y = rng.uniform(-40.0, 40.0), rng.uniform(-5.0, 5.0)
    flow = np.stack([t_x / depth + c_x, t_y / depth + c_y], axis=-1)
    flow += rng.normal(0.0, 0.3, size=flow.shape)
    return flow, depth, mask


def check_calib(seed, eps=1e-6, size=(6, 6)):
    rng = np.random.default_rng(seed)
    flow, depth, mask = _calib_instance(rng, size)
    jac = calib_mod.estimate_params_jacobian(flow, depth, mask)

    def solve(f, d):
        est = calib_mod.estimate_params(f, d, mask)
        return np.array([est.t_x_star, est.c_x_star, est.t_y_star, est.c_y_star])

    h, w = depth.shape
    worst = 0.0
    analytic = np.stack([jac.dtx_dwx, jac.dcx_dwx, jac.dty_dwy, jac.dcy_dwy,
                         jac.dtx_dd, jac.dcx_dd, jac.dty_dd, jac.dcy_dd])
    numeric = np.zeros_like(analytic)
    for y in range(h):
        for x in range(w):
            for comp, rows in ((0, (0, 1)), (1, (2, 3))):
                plus = flow.copy()
                plus[y, x, comp] += eps
                minus = flow.copy()
                minus[y, x, comp] -= eps
                diff = (solve(plus, depth) - solve(minus, depth)) / (2.0 * eps)
                numeric[rows[0], y, x] = diff[2 * comp]
                numeric[rows[1], y, x] = diff[2 * comp + 1]
            d_plus = depth.copy()
            d_plus[y, x] += eps
            d_minus = depth.copy()
            d_minus[y, x] -= eps
            diff = (solve(flow, d_plus) - solve(flow, d_minus)) / (2.0 * eps)
            numeric[4, y, x] = diff[0]
            numeric[5, y, x] = diff[1]
            numeric[6, y, x] = diff[2]
            numeric[7, y, x] = diff[3]
    worst = max(worst, rel_err(analytic, numeric))
    return worst


def run_all(op="all", eps=1e-6, seed=0, instances=5):
    """Run the requested checks over ``instances`` derived seeds."""
    checks = []
    seeds = [seed + i for i in range(instances)]
    if op in ("warp", "all"):
        for s in seeds:
            checks.append({"name": "warp", "seed": s, "max_rel_err": check_warp(s, eps)})
    if op in ("calib", "all"):
        for s in seeds:
            checks.append({"name": "calib", "seed": s, "max_rel_err": check_calib(s, eps)})
    if op in ("kpn", "all"):
        for s in seeds:
            for variant in kpn.KpnVariant:
                checks.append({
                    "name": f"kpn_{variant.label}",
                    "seed": s,
                    "max_rel_err": check_kpn(s, eps, variant),
                })
    return {"op": op, "eps": eps, "checks": checks}
