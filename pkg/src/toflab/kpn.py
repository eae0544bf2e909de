"""Per-pixel dynamic filtering of depth maps.

A :class:`KernelField` holds one k x k filter and one bias value per pixel.
:func:`apply` runs the filtering operator in one of six variants that differ
in (a) whether the per-pixel weights are normalized by their L1 norm and
(b) whether the bias is added to the depth before filtering, to the output
after filtering, or not at all.  Adding the bias first and normalizing is the
configuration that lets the bias absorb large-area depth offsets while the
kernel does edge-aware smoothing.

:func:`direct_fit` demonstrates the refinement objective without any learned
predictor: it descends the masked depth + gradient loss directly in the
kernel field of a single image.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from ._kernels_np import BIAS_AFTER, BIAS_FIRST, BIAS_NONE, NORM_EPS, patch_source_indices
from .backend import kernels as _K
from .errors import ContractError, DegenerateInputError, DimensionError, DivergenceError
from .imaging import ensure_image, ensure_mask


class KpnVariant(enum.Enum):
    """Filtering variants: (normalize?, bias placement)."""

    NORM_BIAS_FIRST = ("norm_bias_first", True, BIAS_FIRST)
    VANILLA = ("vanilla", False, BIAS_AFTER)
    AFT_BIAS = ("aft_bias", True, BIAS_AFTER)
    NO_NORM = ("no_norm", False, BIAS_FIRST)
    NO_NORM_NO_BIAS = ("no_norm_no_bias", False, BIAS_NONE)
    NO_BIAS = ("no_bias", True, BIAS_NONE)

    def __init__(self, label, normalize, bias_mode):
        self.label = label
        self.normalize = normalize
        self.bias_mode = bias_mode

    @classmethod
    def from_label(cls, label):
        for variant in cls:
            if variant.label == label:
                return variant
        raise ContractError(f"unknown variant {label!r}")


#: Alias: the vanilla operator is exactly "no normalization, bias after".
NO_NORM_AFT_BIAS = KpnVariant.VANILLA


@dataclass
class KernelField:
    """Per-pixel k x k weights plus per-pixel bias."""

    weights: np.ndarray  # (h, w, k*k)
    bias: np.ndarray  # (h, w)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 3:
            raise ContractError(f"weights must be (h, w, k*k), got {self.weights.shape}")
        if self.bias.shape != self.weights.shape[:2]:
            raise ContractError("bias size must match weights size")
        k = int(round(np.sqrt(self.weights.shape[2])))
        if k * k != self.weights.shape[2] or k % 2 == 0:
            raise ContractError(
                f"weights last axis must be an odd k squared, got {self.weights.shape[2]}"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ContractError("kernel field contains NaN or Inf")

    @property
    def k(self):
        return int(round(np.sqrt(self.weights.shape[2])))

    @property
    def shape(self):
        return self.bias.shape

    @classmethod
    def identity(cls, shape, k=3):
        """Delta kernels and zero bias: the identity operator for every variant."""
        h, w = shape
        weights = np.zeros((h, w, k * k))
        weights[:, :, (k * k) // 2] = 1.0
        return cls(weights=weights, bias=np.zeros((h, w)))


def extract_patches(img, k, boundary="replicate"):
    """All k x k patches of a single-channel image, row-major per window.

    Borders replicate the edge pixel; entry (p, i) of the (h, w, k*k) result
    is the i-th element of the window centered at p.
    """
    img = ensure_image(img, channels=1, name="patch input")
    if img.ndim == 3:
        img = img[:, :, 0]
    if k < 1 or k % 2 == 0:
        raise ContractError(f"kernel size must be odd and positive, got {k}")
    if boundary != "replicate":
        raise ContractError(f"unknown boundary policy {boundary!r}")
    return _K.extract_patches(np.ascontiguousarray(img), int(k))


def normalize_kernels(kf: KernelField) -> KernelField:
    """Divide each pixel's weights by their L1 norm (plus a 1e-12 guard).

    The guard keeps all-zero kernels finite and the operation differentiable
    everywhere except the (measure-zero) sign kinks.
    """
    return KernelField(weights=_K.normalize_weights(np.ascontiguousarray(kf.weights)),
                       bias=kf.bias.copy())


def _check_apply_args(depth, kf):
    depth = ensure_image(depth, channels=1, name="depth")
    if depth.ndim == 3:
        depth = depth[:, :, 0]
    if depth.shape != kf.shape:
        raise DimensionError(f"depth {depth.shape} vs kernel field {kf.shape}")
    return np.ascontiguousarray(depth)


def apply(depth, kf: KernelField, variant: KpnVariant = KpnVariant.NORM_BIAS_FIRST):
    """Filter ``depth`` with the per-pixel kernels of ``kf``.

    Bias-first variants compute  w_p . patch(D + b, p);  bias-after variants
    compute  w_p . patch(D, p) + b(p);  normalized variants use the L1
    normalization of the weights.
    """
    depth = _check_apply_args(depth, kf)
    return _K.kpn_apply(
        depth,
        np.ascontiguousarray(kf.weights),
        np.ascontiguousarray(kf.bias),
        variant.normalize,
        variant.bias_mode,
    )


@dataclass(frozen=True)
class KpnGradients:
    """Local partials of :func:`apply` in patch-slot layout.

    ``d_weights[p, i]`` is the partial of the output at p w.r.t. the i-th
    weight of p's own kernel.  ``d_bias_slots`` and ``d_depth_slots`` give
    the partial of the output at p w.r.t. the bias/depth value read by slot i
    of p's patch; the touched source pixel is given by
    ``patch_source_indices`` and coincident slots (replicated borders) add
    up.  For bias-after variants the bias partial is attached to the center
    slot (the output pixel itself).
    """

    d_weights: np.ndarray
    d_bias_slots: np.ndarray
    d_depth_slots: np.ndarray
    k: int

    def source_indices(self):
        h, w = self.d_weights.shape[:2]
        return patch_source_indices(h, w, self.k)

    def _dense(self, slots):
        h, w = slots.shape[:2]
        src_y, src_x = self.source_indices()
        dense = np.zeros((h * w, h * w))
        rows = np.repeat(np.arange(h * w), self.k * self.k)
        cols = (src_y * w + src_x).ravel()
        np.add.at(dense, (rows, cols), slots.ravel())
        return dense

    def dense_bias_jacobian(self):
        """(h*w, h*w) matrix d out(row) / d bias(col); small rasters only."""
        return self._dense(self.d_bias_slots)

    def dense_depth_jacobian(self):
        """(h*w, h*w) matrix d out(row) / d depth(col); small rasters only."""
        return self._dense(self.d_depth_slots)


def apply_gradient(depth, kf: KernelField, variant: KpnVariant = KpnVariant.NORM_BIAS_FIRST):
    """Analytic partials of :func:`apply` w.r.t. weights, bias and depth."""
    depth = _check_apply_args(depth, kf)
    k = kf.k
    base = depth + kf.bias if variant.bias_mode == BIAS_FIRST else depth
    x = _K.extract_patches(np.ascontiguousarray(base), k)
    if variant.normalize:
        denom = np.sum(np.abs(kf.weights), axis=-1, keepdims=True) + NORM_EPS
        ww = kf.weights / denom
        dot = np.einsum("hwk,hwk->hw", ww, x)
        d_weights = (x - dot[..., None] * np.sign(kf.weights)) / denom
    else:
        ww = kf.weights
        d_weights = x.copy()
    d_depth_slots = ww.copy()
    if variant.bias_mode == BIAS_FIRST:
        d_bias_slots = ww.copy()
    elif variant.bias_mode == BIAS_AFTER:
        d_bias_slots = np.zeros_like(ww)
        d_bias_slots[:, :, (k * k) // 2] = 1.0
    else:
        d_bias_slots = np.zeros_like(ww)
    return KpnGradients(
        d_weights=d_weights,
        d_bias_slots=d_bias_slots,
        d_depth_slots=d_depth_slots,
        k=k,
    )


def apply_vjp(depth, kf: KernelField, variant: KpnVariant, grad_out):
    """Backpropagate a cotangent of the output to (weights, bias, depth)."""
    depth = _check_apply_args(depth, kf)
    grad_out = np.ascontiguousarray(np.asarray(grad_out, dtype=np.float64))
    if grad_out.shape != depth.shape:
        raise DimensionError("grad_out size must match depth size")
    return _K.kpn_apply_vjp(
        depth,
        np.ascontiguousarray(kf.weights),
        np.ascontiguousarray(kf.bias),
        variant.normalize,
        variant.bias_mode,
        grad_out,
    )


@dataclass(frozen=True)
class DirectFitConfig:
    """Options for :func:`direct_fit`.

    ``step`` is measured in output units per iteration (the raw loss gradient
    is rescaled by the valid-pixel count so the step is size-independent).
    With ``halve_on_increase`` an increasing step is rejected and retried at
    half length, which makes the loss trace non-increasing.  ``tol`` stops
    the descent once the loss reaches the floor set by the normalization
    guard (the 1e-12 added to every L1 norm leaves normalized variants a
    residual of that order even at the exact optimum).
    """

    step: float = 0.05
    iterations: int = 500
    lam: float = 10.0
    halve_on_increase: bool = True
    min_step: float = 1e-12
    tol: float = 1e-10


@dataclass
class FitResult:
    kernel_field: KernelField
    trace: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.trace[-1] if self.trace else np.nan


def direct_fit(depth, target, mask=None, variant: KpnVariant = KpnVariant.NORM_BIAS_FIRST,
               config: DirectFitConfig | None = None):
    """Fit one kernel field to one image by gradient descent.

    Minimizes the masked depth + gradient loss of ``apply(depth, kf, variant)``
    against ``target`` over the weights and the bias, starting from the
    identity operator (delta kernels, zero bias).  Returns a
    :class:`FitResult` whose trace holds the loss per accepted iterate.
    Raises :class:`DivergenceError` (with the trace) if the loss goes
    non-finite.
    """
    config = config or DirectFitConfig()
    depth = ensure_image(depth, channels=1, name="depth")
    if depth.ndim == 3:
        depth = depth[:, :, 0]
    depth = np.ascontiguousarray(depth)
    target = ensure_image(target, channels=1, name="target")
    if target.ndim == 3:
        target = target[:, :, 0]
    if target.shape != depth.shape:
        raise DimensionError("target size must match depth size")
    if mask is None:
        mask = np.ones(depth.shape, dtype=bool)
    else:
        mask = ensure_mask(mask)
    n_valid = int(np.count_nonzero(mask))
    if n_valid == 0:
        raise DegenerateInputError("direct_fit needs a non-empty mask")

    kf = KernelField.identity(depth.shape)
    step = config.step

    def loss_of(field_):
        out = apply(depth, field_, variant)
        if not np.all(np.isfinite(out)):
            return out, float("inf")
        total, _, _ = metrics.depth_loss(out, target, mask, lam=config.lam)
        return out, total

    out, loss = loss_of(kf)
    trace = [loss]
    if not np.isfinite(loss):
        raise DivergenceError("non-finite loss at initialization", trace)
    for _ in range(config.iterations):
        if loss <= config.tol:
            break
        grad_out = metrics.depth_loss_gradient(out, target, mask, lam=config.lam)
        g_w, g_b, _ = apply_vjp(depth, kf, variant, np.ascontiguousarray(grad_out))
        # rescale to per-pixel units so `step` is independent of image size
        g_w = g_w * n_valid
        g_b = g_b * n_valid
        new_w = kf.weights - step * g_w
        new_b = kf.bias - step * g_b
        if not (np.all(np.isfinite(new_w)) and np.all(np.isfinite(new_b))):
            trace.append(float("inf"))
            raise DivergenceError("parameters diverged during direct fit", trace)
        candidate = KernelField(weights=new_w, bias=new_b)
        cand_out, cand_loss = loss_of(candidate)
        if not np.isfinite(cand_loss):
            trace.append(float(cand_loss))
            raise DivergenceError("loss diverged during direct fit", trace)
        if config.halve_on_increase and cand_loss > loss:
            step *= 0.5
            if step < config.min_step:
                break
            continue
        kf = candidate
        out = cand_out
        loss = cand_loss
        trace.append(loss)
    return FitResult(kernel_field=kf, trace=trace)
