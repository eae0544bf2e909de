"""Mask-aware losses and evaluation protocols for flows and depth maps.

All reductions run over valid pixels only; values at masked-out pixels never
influence a result.  ``depth_loss`` combines an L1 data term with an L1 term
on Sobel gradients (weight ``lam``, default 10); ``quantile_mae`` ranks
pixels by the error of the *input* depth and reports the mean absolute error
of the *prediction* per quartile class, restricted to ground truth closer
than ``range_limit``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError
from .imaging import ensure_flow, ensure_image, ensure_mask, sobel, sobel_adjoint

#: Default gradient-term weight of :func:`depth_loss`.
DEFAULT_LAM = 10.0

#: Default ground-truth gate of :func:`quantile_mae`, in depth units.
DEFAULT_RANGE_LIMIT = 4.0


@dataclass(frozen=True)
class QuantileReport:
    """Per-quartile mean absolute errors of a refined depth map.

    The quartile classes partition the valid in-range pixels by the rank of
    the input error; ``outlier_fraction`` is the share of those pixels that
    fall into the last (outlier) class.
    """

    mae_low: float
    mae_mid: float
    mae_high: float
    mae_all: float
    outlier_fraction: float
    range_limit: float

    def to_dict(self):
        return asdict(self)


def _checked_mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = ensure_mask(mask)
    if mask.shape != shape:
        raise DimensionError(f"mask size {mask.shape} != raster size {shape}")
    return mask


def aepe(pred, gt, mask=None):
    """Average Euclidean end-point error between two flow fields."""
    pred = ensure_flow(pred, name="pred")
    gt = ensure_flow(gt, name="gt")
    if pred.shape != gt.shape:
        raise DimensionError(f"flow sizes disagree: {pred.shape} vs {gt.shape}")
    mask = _checked_mask(mask, pred.shape[:2])
    if not np.any(mask):
        raise DegenerateInputError("aepe needs a non-empty mask")
    diff = pred - gt
    epe = np.sqrt(diff[:, :, 0] ** 2 + diff[:, :, 1] ** 2)
    return float(np.mean(epe[mask]))


def flow_loss_multiscale(preds, gts, alphas=None, masks=None):
    """Weighted multi-scale L1 flow loss.

    sum_s (alpha_s / N_s) * sum_p ||pred_s(p) - gt_s(p)||_1 over the valid
    pixels of each scale, N_s the per-scale valid-pixel count.  ``alphas``
    defaults to uniform weights.
    """
    if len(preds) != len(gts):
        raise ContractError(f"scale counts disagree: {len(preds)} vs {len(gts)}")
    if not preds:
        raise DegenerateInputError("no scales given")
    if alphas is None:
        alphas = [1.0] * len(preds)
    if len(alphas) != len(preds):
        raise ContractError("one weight per scale is required")
    if masks is None:
        masks = [None] * len(preds)
    if len(masks) != len(preds):
        raise ContractError("one mask per scale is required")
    total = 0.0
    for pred, gt, alpha, mask in zip(preds, gts, alphas, masks):
        pred = ensure_flow(pred, name="pred")
        gt = ensure_flow(gt, name="gt")
        if pred.shape != gt.shape:
            raise DimensionError(f"flow sizes disagree: {pred.shape} vs {gt.shape}")
        mask = _checked_mask(mask, pred.shape[:2])
        n = int(np.count_nonzero(mask))
        if n == 0:
            raise DegenerateInputError("flow_loss_multiscale needs non-empty masks")
        l1 = np.abs(pred - gt).sum(axis=-1)
        total += alpha / n * float(np.sum(l1[mask]))
    return float(total)


def depth_loss(pred, gt, mask=None, lam=DEFAULT_LAM):
    """Masked L1 depth loss plus weighted L1 Sobel-gradient loss.

    Returns ``(total, data_term, grad_term)`` with
    total = data_term + lam * grad_term, each averaged over the valid pixels.
    """
    pred = ensure_image(pred, channels=1, name="pred")
    gt = ensure_image(gt, channels=1, name="gt")
    if pred.ndim == 3:
        pred = pred[:, :, 0]
    if gt.ndim == 3:
        gt = gt[:, :, 0]
    if pred.shape != gt.shape:
        raise DimensionError(f"depth sizes disagree: {pred.shape} vs {gt.shape}")
    mask = _checked_mask(mask, pred.shape)
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise DegenerateInputError("depth_loss needs a non-empty mask")
    diff = pred - gt
    g_x, g_y = sobel(diff)  # sobel is linear, so this equals the gradient difference
    data_term = float(np.sum(np.abs(diff)[mask])) / n
    grad_term = float(np.sum((np.abs(g_x) + np.abs(g_y))[mask])) / n
    return data_term + lam * grad_term, data_term, grad_term


def depth_loss_gradient(pred, gt, mask=None, lam=DEFAULT_LAM):
    """Subgradient of the total :func:`depth_loss` w.r.t. ``pred``."""
    pred = ensure_image(pred, channels=1, name="pred")
    gt = ensure_image(gt, channels=1, name="gt")
    if pred.ndim == 3:
        pred = pred[:, :, 0]
    if gt.ndim == 3:
        gt = gt[:, :, 0]
    if pred.shape != gt.shape:
        raise DimensionError(f"depth sizes disagree: {pred.shape} vs {gt.shape}")
    mask = _checked_mask(mask, pred.shape)
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise DegenerateInputError("depth_loss_gradient needs a non-empty mask")
    diff = pred - gt
    g_x, g_y = sobel(diff)
    m = mask.astype(np.float64)
    grad = np.sign(diff) * m
    grad += lam * sobel_adjoint(np.sign(g_x) * m, np.sign(g_y) * m)
    return grad / n


def quantile_mae(input_depth, pred, gt, mask=None, range_limit=DEFAULT_RANGE_LIMIT):
    """Quartile-of-input-error breakdown of the prediction's absolute error.

    Valid pixels with gt < ``range_limit`` are ranked by |input - gt|
    ascending (stable, ties broken by row-major pixel index) and split at
    ranks floor(N/4), floor(N/2), floor(3N/4) into low / mid / high / outlier
    classes.  The report carries the MAE of |pred - gt| per class and over
    all in-range valid pixels.
    """
    input_depth = ensure_image(input_depth, channels=1, name="input_depth")
    pred = ensure_image(pred, channels=1, name="pred")
    gt = ensure_image(gt, channels=1, name="gt")
    arrs = [a[:, :, 0] if a.ndim == 3 else a for a in (input_depth, pred, gt)]
    input_depth, pred, gt = arrs
    if not (input_depth.shape == pred.shape == gt.shape):
        raise DimensionError("input_depth, pred and gt sizes must agree")
    mask = _checked_mask(mask, gt.shape)
    sel = mask & (gt < range_limit)
    n = int(np.count_nonzero(sel))
    if n < 4:
        raise DegenerateInputError(f"need >= 4 valid in-range pixels, got {n}")
    input_err = np.abs(input_depth - gt)[sel]
    pred_err = np.abs(pred - gt)[sel]
    order = np.argsort(input_err, kind="stable")  # row-major index breaks ties
    pred_err = pred_err[order]
    q1, q2, q3 = n // 4, n // 2, (3 * n) // 4
    return QuantileReport(
        mae_low=float(np.mean(pred_err[:q1])),
        mae_mid=float(np.mean(pred_err[q1:q2])),
        mae_high=float(np.mean(pred_err[q2:q3])),
        mae_all=float(np.mean(pred_err)),
        outlier_fraction=float((n - q3) / n),
        range_limit=float(range_limit),
    )
