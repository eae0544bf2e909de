"""Camera model of the weakly calibrated rig and multi-view operations.

The rig fixes everything except the principal-point offset (c_x, c_y) of the
color camera and the in-plane translation (t_x, t_y) between the two views.
A scene point at depth z seen at pixel p in the reference view appears at
p + (f_x t_x / z + c_x, f_y t_y / z + c_y) in the second view; this relation
drives the depth-to-flow conversion, the misalignment augmentation, and the
closed-form estimation in :mod:`toflab.calib`.

Depths are in scene units (meters by default), focal lengths and flows in
pixels, translations in scene units.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError, DegenerateInputError, DomainError
from .imaging import ensure_flow, ensure_image, ensure_mask, warp_image


@dataclass(frozen=True)
class WeakCalibParams:
    """Fixed focal lengths plus the four runtime-varying parameters."""

    f_x: float
    f_y: float
    t_x: float = 0.0
    t_y: float = 0.0
    c_x: float = 0.0
    c_y: float = 0.0

    def __post_init__(self):
        if not (self.f_x > 0.0 and self.f_y > 0.0):
            raise ContractError("focal lengths must be positive")


@dataclass(frozen=True)
class CalibPerturbation:
    """Additive deltas for the four runtime parameters."""

    t_x: float = 0.0
    t_y: float = 0.0
    c_x: float = 0.0
    c_y: float = 0.0


@dataclass(frozen=True)
class PerturbationConfig:
    """Sampling ranges for misalignment augmentation.

    ``principal_frac`` scales the image size into the principal-point range;
    ``translation_frac`` scales the reference translations ``t_ref_*``.  The
    reference translations are device-specific and must come from
    configuration; the defaults model a phone-scale rig.
    """

    principal_frac: float = 0.025
    translation_frac: float = 0.30
    t_ref_x: float = 0.05
    t_ref_y: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.principal_frac < 0.0 or self.translation_frac < 0.0:
            raise ContractError("perturbation fractions must be >= 0")


@dataclass
class DataSample:
    """One {amplitude, rgb, tof depth, gt depth, mask} record at a single view."""

    rgb: np.ndarray
    amplitude: np.ndarray
    tof_depth: np.ndarray
    gt_depth: np.ndarray
    mask: np.ndarray
    calib: WeakCalibParams
    aligned: bool = True
    gt_flow: np.ndarray | None = None
    seed: int | None = None

    def validate(self):
        rgb = ensure_image(self.rgb, name="rgb")
        shape = rgb.shape[:2]
        for name in ("amplitude", "tof_depth", "gt_depth"):
            arr = ensure_image(getattr(self, name), channels=1, name=name)
            if arr.shape[:2] != shape:
                raise ContractError(f"{name} size {arr.shape[:2]} != rgb size {shape}")
        mask = ensure_mask(self.mask)
        if mask.shape != shape:
            raise ContractError(f"mask size {mask.shape} != rgb size {shape}")
        if self.gt_flow is not None:
            flow = ensure_flow(self.gt_flow, name="gt_flow")
            if flow.shape[:2] != shape:
                raise ContractError(f"gt_flow size {flow.shape[:2]} != rgb size {shape}")
        gt = np.asarray(self.gt_depth, dtype=np.float64)
        if np.any(gt[mask] <= 0.0):
            raise ContractError("gt_depth must be positive on valid mask pixels")
        return self

    @property
    def shape(self):
        return np.asarray(self.rgb).shape[:2]


def perturbed(params: WeakCalibParams, deltas: CalibPerturbation) -> WeakCalibParams:
    """Apply additive deltas to the four runtime parameters."""
    return replace(
        params,
        t_x=params.t_x + deltas.t_x,
        t_y=params.t_y + deltas.t_y,
        c_x=params.c_x + deltas.c_x,
        c_y=params.c_y + deltas.c_y,
    )


def flow_from_depth(depth, params: WeakCalibParams, mask=None):
    """Per-pixel displacement induced by the rig parameters at each depth.

    u = f_x t_x / z + c_x and v = f_y t_y / z + c_y.  Pixels outside ``mask``
    get zero flow (their validity is tracked by the mask, the raster stays
    finite).  Raises :class:`DomainError` on non-positive depth at a valid
    pixel.
    """
    depth = ensure_image(depth, channels=1, name="depth")
    if mask is None:
        mask = np.ones(depth.shape[:2], dtype=bool)
    else:
        mask = ensure_mask(mask)
        if mask.shape != depth.shape[:2]:
            raise ContractError("mask size must match depth size")
    if np.any(depth[mask] <= 0.0):
        raise DomainError("depth must be positive at valid pixels")
    z = np.where(mask, depth, 1.0)
    u = np.where(mask, params.f_x * params.t_x / z + params.c_x, 0.0)
    v = np.where(mask, params.f_y * params.t_y / z + params.c_y, 0.0)
    return np.stack([u, v], axis=-1)


def plane_correct(radial_depth, params: WeakCalibParams, principal):
    """Convert point-to-point (radial) distance to point-to-plane depth.

    z(u, v) = r / sqrt(1 + ((u - p_x)/f_x)^2 + ((v - p_y)/f_y)^2) with
    ``principal`` = (p_x, p_y) in pixels.
    """
    r = ensure_image(radial_depth, channels=1, name="radial_depth")
    if np.any(r <= 0.0):
        raise DomainError("radial depth must be positive")
    h, w = r.shape[:2]
    p_x, p_y = float(principal[0]), float(principal[1])
    xs = (np.arange(w) - p_x) / params.f_x
    ys = (np.arange(h) - p_y) / params.f_y
    norm = np.sqrt(1.0 + xs[None, :] ** 2 + ys[:, None] ** 2)
    return r / norm


def sample_perturbation(cfg: PerturbationConfig, image_size, rng=None) -> CalibPerturbation:
    """Draw one uniform perturbation of the four runtime parameters.

    ``image_size`` is (width, height).  c_x ~ U(+-principal_frac * width),
    c_y ~ U(+-principal_frac * height), t_* ~ U(+-translation_frac * |t_ref_*|).
    Without an explicit ``rng`` the draw is a pure function of ``cfg.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    w, h = image_size
    c_lim_x = cfg.principal_frac * w
    c_lim_y = cfg.principal_frac * h
    t_lim_x = cfg.translation_frac * abs(cfg.t_ref_x)
    t_lim_y = cfg.translation_frac * abs(cfg.t_ref_y)
    return CalibPerturbation(
        t_x=rng.uniform(-t_lim_x, t_lim_x),
        t_y=rng.uniform(-t_lim_y, t_lim_y),
        c_x=rng.uniform(-c_lim_x, c_lim_x),
        c_y=rng.uniform(-c_lim_y, c_lim_y),
    )


def _splat_nearest(depth, flow_u, flow_v, valid):
    """Z-buffered forward splat to rounded target pixels.

    Returns ``(zbuf, received)``; collisions keep the nearer depth, pixels
    that receive no splat stay marked unreceived.
    """
    h, w = depth.shape
    xs = np.arange(w)[None, :]
    ys = np.arange(h)[:, None]
    qx = np.rint(xs + flow_u).astype(np.intp)
    qy = np.rint(ys + flow_v).astype(np.intp)
    ok = valid & (qx >= 0) & (qx < w) & (qy >= 0) & (qy < h)
    zbuf = np.full((h, w), np.inf)
    np.minimum.at(zbuf, (qy[ok], qx[ok]), depth[ok])
    received = np.isfinite(zbuf)
    return zbuf, received


def augment_sample(
    sample: DataSample,
    deltas: CalibPerturbation,
    *,
    refine_iters: int = 60,
    refine_tol: float = 1e-13,
    occlusion_tol: float = 0.05,
) -> DataSample:
    """Derive a misaligned sample from an aligned one.

    The ground-truth depth and the color image move to the virtual second
    view defined by ``deltas``; amplitude and measured depth stay put.  The
    returned ``gt_flow`` lives on the second-view grid and points back into
    the original view (warping an original-view raster by it re-renders the
    second view), so it is the supervision signal for alignment and, paired
    with the warped depth, satisfies the depth-to-flow relation exactly.

    The depth transfer runs in two passes: a z-buffered nearest-pixel splat
    settles occlusions and holes, then a fixed-point refinement makes the
    warped depth bilinearly self-consistent, i.e. it converges to
    z(q) = gt_depth(q + gt_flow(q)) so that backward warping reproduces the
    transferred depth to ``refine_tol`` instead of to splat-rounding error.
    Pixels whose refinement drifts more than ``occlusion_tol`` from the splat
    depth (depth-edge mixtures) are masked out.
    """
    sample.validate()
    if not sample.aligned:
        raise ContractError("augment_sample expects an aligned input sample")
    gt = np.asarray(sample.gt_depth, dtype=np.float64)
    mask = ensure_mask(sample.mask)
    valid_src = mask & (gt > 0.0)
    if not np.any(valid_src):
        raise DegenerateInputError("no valid pixels to augment")
    h, w = gt.shape
    calib = perturbed(sample.calib, deltas)
    tx_px = sample.calib.f_x * deltas.t_x
    ty_px = sample.calib.f_y * deltas.t_y

    # forward flow (original view -> virtual view) on valid source pixels
    z_safe = np.where(valid_src, gt, 1.0)
    fu = np.where(valid_src, tx_px / z_safe + deltas.c_x, 0.0)
    fv = np.where(valid_src, ty_px / z_safe + deltas.c_y, 0.0)
    zbuf, received = _splat_nearest(gt, fu, fv, valid_src)

    # fixed point z(q) = gt(q - (tx/z + c)); the splat initializes the branch
    z2 = np.where(received, zbuf, z_safe)
    for _ in range(refine_iters):
        su = -(tx_px / z2 + deltas.c_x)
        sv = -(ty_px / z2 + deltas.c_y)
        z_new, _ = warp_image(gt, np.stack([su, sv], axis=-1))
        z_new = np.maximum(z_new, 1e-9)
        step = np.max(np.abs(z_new - z2))
        z2 = z_new
        if step < refine_tol:
            break

    # final transfer: warp by the flow of the converged depth, then recompute
    # the flow from the transferred depth so that flow and depth satisfy the
    # conversion relation to machine precision
    flow_back = np.stack([-(tx_px / z2 + deltas.c_x), -(ty_px / z2 + deltas.c_y)], axis=-1)
    gt_warped, bounds_ok = warp_image(gt, flow_back)
    gt_warped = np.maximum(gt_warped, 1e-9)
    gt_flow = np.stack(
        [-(tx_px / gt_warped + deltas.c_x), -(ty_px / gt_warped + deltas.c_y)], axis=-1
    )

    rgb_warped, _ = warp_image(sample.rgb, gt_flow)
    mask_cover, _ = warp_image(valid_src.astype(np.float64), gt_flow)
    residual = np.abs(gt_warped - z2)
    new_mask = (
        received
        & bounds_ok
        & (mask_cover > 1.0 - 1e-9)
        & (residual <= 1e-9 * (1.0 + np.abs(z2)))
        & (np.abs(z2 - np.where(received, zbuf, z2)) <= occlusion_tol)
    )

    return DataSample(
        rgb=rgb_warped,
        amplitude=np.asarray(sample.amplitude, dtype=np.float64).copy(),
        tof_depth=np.asarray(sample.tof_depth, dtype=np.float64).copy(),
        gt_depth=gt_warped,
        mask=new_mask,
        calib=calib,
        aligned=False,
        gt_flow=gt_flow,
        seed=sample.seed,
    )
