"""Raster containers and the core image operations.

Rasters are plain float64 numpy arrays: (h, w) or (h, w, c) for images,
(h, w, 2) for flow fields (channel 0 = x displacement, 1 = y displacement)
and boolean (h, w) for masks.  ``ensure_*`` validate the container
invariants (finite values, channel counts, binary masks) and are applied at
every public entry point.

Coordinate conventions live in ``_kernels_np`` and are shared by both
kernel backends.
"""

from __future__ import annotations

import numpy as np

from ._kernels_np import FILL_CLAMP, FILL_ZERO
from .backend import kernels as _K
from .errors import ContractError, DimensionError

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()

_BOUNDARY_FILLS = {"clamp": FILL_CLAMP, "zero": FILL_ZERO}


def ensure_image(img, channels=None, name="image"):
    """Validate and return a float64 raster of shape (h, w) or (h, w, c)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ContractError(f"{name} must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] < 1:
        raise ContractError(f"{name} must have >= 1 channel")
    if channels is not None:
        got = 1 if arr.ndim == 2 else arr.shape[2]
        if got != channels:
            raise ContractError(f"{name} must have {channels} channel(s), got {got}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains NaN or Inf")
    return arr


def ensure_flow(flow, name="flow"):
    """Validate and return a float64 flow field of shape (h, w, 2)."""
    arr = np.asarray(flow, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ContractError(f"{name} must have shape (h, w, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains NaN or Inf")
    return arr


def ensure_mask(mask, name="mask"):
    """Validate and return a boolean mask of shape (h, w)."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.bool_:
        vals = np.asarray(arr, dtype=np.float64)
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise ContractError(f"{name} must be binary")
        arr = vals.astype(bool)
    return arr


def _same_size(a, b, what):
    if a.shape[:2] != b.shape[:2]:
        raise DimensionError(f"{what}: {a.shape[:2]} vs {b.shape[:2]}")


def _as_3d(img):
    return img[:, :, None] if img.ndim == 2 else img


def _like(out3, img):
    return out3[:, :, 0] if img.ndim == 2 else out3


def sample_bilinear(img, x, y):
    """Bilinear lookup of ``img`` at the continuous position (x, y).

    Returns ``(value, in_bounds)``; ``value`` is a scalar for single-channel
    images and a (c,) vector otherwise.  Out-of-raster taps clamp to the
    edge; ``in_bounds`` is False when the 2x2 support leaves the raster.
    """
    img = ensure_image(img)
    img3 = _as_3d(img)
    h, w = img3.shape[:2]
    x = float(x)
    y = float(y)
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    fx = x - x0
    fy = y - y0
    x0c = min(max(x0, 0), w - 1)
    x1c = min(max(x0 + 1, 0), w - 1)
    y0c = min(max(y0, 0), h - 1)
    y1c = min(max(y0 + 1, 0), h - 1)
    top = img3[y0c, x0c] * (1.0 - fx) + img3[y0c, x1c] * fx
    bot = img3[y1c, x0c] * (1.0 - fx) + img3[y1c, x1c] * fx
    value = top * (1.0 - fy) + bot * fy
    in_bounds = (0.0 <= x <= w - 1.0) and (0.0 <= y <= h - 1.0)
    if img.ndim == 2:
        return float(value[0]), in_bounds
    return value, in_bounds


def warp_image(img, flow, boundary="clamp"):
    """Warp ``img`` by ``flow``: output(p) = img(p + flow(p)), bilinearly.

    Returns ``(warped, valid)``.  ``valid`` is False where the sample support
    leaves the raster; the sampled value there follows ``boundary`` ("clamp"
    repeats the edge, "zero" writes 0).
    """
    img = ensure_image(img)
    flow = ensure_flow(flow)
    _same_size(img, flow, "warp_image: image vs flow size mismatch")
    if boundary not in _BOUNDARY_FILLS:
        raise ContractError(f"unknown boundary policy {boundary!r}")
    img3 = np.ascontiguousarray(_as_3d(img))
    u = np.ascontiguousarray(flow[:, :, 0])
    v = np.ascontiguousarray(flow[:, :, 1])
    out, valid = _K.bilinear_warp(img3, u, v, _BOUNDARY_FILLS[boundary])
    return _like(out, img), valid


def warp_gradient(img, flow):
    """Analytic partials of :func:`warp_image` w.r.t. the flow components.

    Returns ``(d_du, d_dv)`` shaped like ``img``.  At integer sample
    positions the derivative of the cell to the right/below applies.
    """
    img = ensure_image(img)
    flow = ensure_flow(flow)
    _same_size(img, flow, "warp_gradient: image vs flow size mismatch")
    img3 = np.ascontiguousarray(_as_3d(img))
    u = np.ascontiguousarray(flow[:, :, 0])
    v = np.ascontiguousarray(flow[:, :, 1])
    du, dv = _K.bilinear_warp_gradient(img3, u, v)
    return _like(du, img), _like(dv, img)


def sobel(img):
    """3x3 Sobel responses of a single-channel image, replicate-padded.

    Returns ``(g_x, g_y)`` computed by cross-correlation with ``SOBEL_X`` and
    ``SOBEL_Y`` (no 1/8 normalization).
    """
    img = ensure_image(img, channels=1, name="sobel input")
    if img.ndim == 3:
        img = img[:, :, 0]
    p = np.pad(img, 1, mode="edge")
    g_x = (-p[:-2, :-2] + p[:-2, 2:]
           - 2.0 * p[1:-1, :-2] + 2.0 * p[1:-1, 2:]
           - p[2:, :-2] + p[2:, 2:])
    g_y = (-p[:-2, :-2] - 2.0 * p[:-2, 1:-1] - p[:-2, 2:]
           + p[2:, :-2] + 2.0 * p[2:, 1:-1] + p[2:, 2:])
    return g_x, g_y


def _correlate3_adjoint(z, kernel):
    """Adjoint of replicate-padded 3x3 cross-correlation with ``kernel``."""
    h, w = z.shape
    acc = np.zeros((h, w))
    ys = np.arange(h)
    xs = np.arange(w)
    for dy in (-1, 0, 1):
        yy = np.clip(ys + dy, 0, h - 1)
        for dx in (-1, 0, 1):
            kv = kernel[dy + 1, dx + 1]
            if kv == 0.0:
                continue
            xx = np.clip(xs + dx, 0, w - 1)
            np.add.at(acc, (yy[:, None], xx[None, :]), kv * z)
    return acc


def sobel_adjoint(z_x, z_y):
    """Adjoint of :func:`sobel`: maps cotangents of (g_x, g_y) back to the image."""
    z_x = ensure_image(z_x, channels=1, name="z_x")
    z_y = ensure_image(z_y, channels=1, name="z_y")
    _same_size(z_x, z_y, "sobel_adjoint: component size mismatch")
    return _correlate3_adjoint(z_x, SOBEL_X) + _correlate3_adjoint(z_y, SOBEL_Y)
