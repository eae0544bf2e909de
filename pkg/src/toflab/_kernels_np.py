"""Reference numpy implementations of the per-pixel hot kernels.

``toflab._kernels`` (Cython) implements the same signatures; ``toflab.backend``
picks one of the two at import time.  Keep both in lockstep: the test suite
asserts elementwise agreement on random instances.

Conventions shared by both backends:
  * images are float64, shape (h, w, c) for the warp kernels, (h, w) for the
    filtering kernels;
  * a sample position is (x + u, y + v) with x the column and y the row;
  * out-of-raster taps clamp to the nearest edge pixel, and a sample is valid
    only while its position stays inside [0, w-1] x [0, h-1];
  * the bilinear derivative at integer positions uses the cell to the
    right/below (fractional part 0 belongs to that cell);
  * patch extraction replicates the border; the slot order of a k x k patch is
    row-major over the window.
"""

from __future__ import annotations

import numpy as np

#: Smoothing guard added to the L1 norm when normalizing kernel weights.
NORM_EPS = 1e-12

FILL_CLAMP = 0
FILL_ZERO = 1

BIAS_NONE = 0
BIAS_FIRST = 1
BIAS_AFTER = 2


def _grid_samples(img, u, v):
    h, w = img.shape[:2]
    gx = np.arange(w, dtype=np.float64)[None, :] + u
    gy = np.arange(h, dtype=np.float64)[:, None] + v
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    fx = gx - x0
    fy = gy - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    valid = (gx >= 0.0) & (gx <= w - 1.0) & (gy >= 0.0) & (gy <= h - 1.0)
    return fx, fy, x0c, x1c, y0c, y1c, valid


def bilinear_warp(img, u, v, fill=FILL_CLAMP):
    """Sample ``img`` at (x + u, y + v) with bilinear weights.

    Returns ``(out, valid)`` where ``out`` has the shape of ``img`` and
    ``valid`` is a boolean (h, w) map that is False wherever the 2x2 support
    leaves the raster.
    """
    fx, fy, x0c, x1c, y0c, y1c, valid = _grid_samples(img, u, v)
    fx = fx[..., None]
    fy = fy[..., None]
    top = img[y0c, x0c] * (1.0 - fx) + img[y0c, x1c] * fx
    bot = img[y1c, x0c] * (1.0 - fx) + img[y1c, x1c] * fx
    out = top * (1.0 - fy) + bot * fy
    if fill == FILL_ZERO:
        out = np.where(valid[..., None], out, 0.0)
    return out, valid


def bilinear_warp_gradient(img, u, v):
    """Partial derivatives of the warped image w.r.t. the displacements.

    Returns ``(d_du, d_dv)``, each shaped like ``img``.
    """
    fx, fy, x0c, x1c, y0c, y1c, _ = _grid_samples(img, u, v)
    fx = fx[..., None]
    fy = fy[..., None]
    d_du = (img[y0c, x1c] - img[y0c, x0c]) * (1.0 - fy) + (img[y1c, x1c] - img[y1c, x0c]) * fy
    d_dv = (img[y1c, x0c] - img[y0c, x0c]) * (1.0 - fx) + (img[y1c, x1c] - img[y0c, x1c]) * fx
    return d_du, d_dv


def extract_patches(img, k):
    """(h, w) -> (h, w, k*k) with replicate-padded borders."""
    h, w = img.shape
    pad = k // 2
    padded = np.pad(img, pad, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    return np.ascontiguousarray(win.reshape(h, w, k * k))


def patch_source_indices(h, w, k):
    """Clipped source pixel of every patch slot.

    Returns ``(src_y, src_x)``, each (h, w, k*k); slot ``i`` of the patch at
    (y, x) reads pixel ``(src_y[y, x, i], src_x[y, x, i])``.
    """
    pad = k // 2
    off = np.arange(-pad, pad + 1)
    oy = np.repeat(off, k)
    ox = np.tile(off, k)
    src_y = np.clip(np.arange(h)[:, None, None] + oy[None, None, :], 0, h - 1)
    src_x = np.clip(np.arange(w)[None, :, None] + ox[None, None, :], 0, w - 1)
    src_y = np.broadcast_to(src_y, (h, w, k * k))
    src_x = np.broadcast_to(src_x, (h, w, k * k))
    return np.ascontiguousarray(src_y), np.ascontiguousarray(src_x)


def normalize_weights(weights):
    """Divide each pixel's weight vector by its L1 norm (plus ``NORM_EPS``)."""
    denom = np.sum(np.abs(weights), axis=-1, keepdims=True) + NORM_EPS
    return weights / denom


def kpn_apply(depth, weights, bias, normalize, bias_mode):
    """Per-pixel dynamic filtering of a depth map.

    ``weights`` is (h, w, k*k), ``bias`` (h, w).  ``bias_mode`` is one of
    BIAS_NONE / BIAS_FIRST (bias added to the depth before filtering) /
    BIAS_AFTER (bias added to the filtered output).
    """
    k2 = weights.shape[-1]
    k = int(round(np.sqrt(k2)))
    base = depth + bias if bias_mode == BIAS_FIRST else depth
    x = extract_patches(base, k)
    ww = normalize_weights(weights) if normalize else weights
    out = np.einsum("hwk,hwk->hw", ww, x)
    if bias_mode == BIAS_AFTER:
        out = out + bias
    return out


def kpn_apply_vjp(depth, weights, bias, normalize, bias_mode, grad_out):
    """Vector-Jacobian product of :func:`kpn_apply`.

    Propagates ``grad_out`` (the gradient of a scalar loss w.r.t. the output)
    back to ``(grad_weights, grad_bias, grad_depth)``.
    """
    h, w = depth.shape
    k2 = weights.shape[-1]
    k = int(round(np.sqrt(k2)))
    base = depth + bias if bias_mode == BIAS_FIRST else depth
    x = extract_patches(base, k)
    if normalize:
        denom = np.sum(np.abs(weights), axis=-1, keepdims=True) + NORM_EPS
        ww = weights / denom
        dot = np.einsum("hwk,hwk->hw", ww, x)
        grad_weights = (x - dot[..., None] * np.sign(weights)) * (grad_out[..., None] / denom)
    else:
        ww = weights
        grad_weights = x * grad_out[..., None]
    coeff = ww * grad_out[..., None]
    src_y, src_x = patch_source_indices(h, w, k)
    flat = np.zeros(h * w)
    np.add.at(flat, (src_y * w + src_x).ravel(), coeff.ravel())
    grad_patch = flat.reshape(h, w)
    grad_depth = grad_patch
    if bias_mode == BIAS_FIRST:
        grad_bias = grad_patch.copy()
    elif bias_mode == BIAS_AFTER:
        grad_bias = grad_out.copy()
    else:
        grad_bias = np.zeros_like(depth)
    return grad_weights, grad_bias, grad_depth
