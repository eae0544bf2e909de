"""Closed-form online estimation of the four runtime rig parameters.

Given a flow field W, a depth map D and a validity mask, the parameters
minimize  sum_p || W(p) - (t_x / D(p) + c_x, t_y / D(p) + c_y) ||^2  over the
valid pixels.  The x and y subproblems decouple into two 2-unknown linear
least-squares systems with design columns [1/D, 1], solved here through
explicit 2x2 normal equations.  The focal lengths are absorbed into the
translation estimates (t_x_star is in pixel * distance units); divide by f_x
to return to scene units.

All operations are differentiable; :func:`estimate_params_jacobian` returns
the closed-form sensitivities w.r.t. the flow and the depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DegeneracyError, DomainError
from .imaging import ensure_flow, ensure_image, ensure_mask

#: Normal-equation condition number beyond which the scene is rejected as
#: effectively constant-depth.
CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class CalibEstimate:
    """Least-squares parameter estimate plus diagnostics."""

    t_x_star: float
    t_y_star: float
    c_x_star: float
    c_y_star: float
    residual_rms: float
    pixel_count: int
    condition: float


@dataclass(frozen=True)
class CalibJacobian:
    """Closed-form sensitivities of the four estimates.

    The x-parameters depend only on the x flow component and the depth (and
    symmetrically for y), so the cross terms are identically zero and are not
    stored.  All arrays are (h, w) and vanish outside the participating
    pixels.
    """

    dtx_dwx: np.ndarray
    dcx_dwx: np.ndarray
    dty_dwy: np.ndarray
    dcy_dwy: np.ndarray
    dtx_dd: np.ndarray
    dcx_dd: np.ndarray
    dty_dd: np.ndarray
    dcy_dd: np.ndarray


def _participating(flow, depth, mask):
    """A pixel participates iff masked valid, depth > 0 and flow finite."""
    finite = np.all(np.isfinite(flow), axis=-1)
    return mask & (depth > 0.0) & finite


def _normal_matrix(r, n):
    s1 = float(np.sum(r))
    s2 = float(np.sum(r * r))
    return np.array([[s2, s1], [s1, float(n)]])


def _condition_2x2(m):
    half_tr = 0.5 * (m[0, 0] + m[1, 1])
    disc = np.sqrt(max(0.25 * (m[0, 0] - m[1, 1]) ** 2 + m[0, 1] ** 2, 0.0))
    lo = half_tr - disc
    hi = half_tr + disc
    if lo <= 0.0:
        return np.inf
    return hi / lo


def _check_inputs(flow, depth, mask):
    flow = ensure_flow(flow)
    depth = ensure_image(depth, channels=1, name="depth")
    if mask is None:
        mask = np.ones(depth.shape[:2], dtype=bool)
    else:
        mask = ensure_mask(mask)
    if flow.shape[:2] != depth.shape[:2] or mask.shape != depth.shape[:2]:
        raise DegenerateInputError("flow, depth and mask sizes must agree")
    return flow, depth, mask


def estimate_params(flow, depth, mask=None) -> CalibEstimate:
    """Solve the masked least-squares problem for {t_x, t_y, c_x, c_y}.

    Raises :class:`DegenerateInputError` with fewer than two participating
    pixels and :class:`DegeneracyError` when the depth is (numerically)
    constant over the mask.
    """
    flow, depth, mask = _check_inputs(flow, depth, mask)
    sel = _participating(flow, depth, mask)
    n = int(np.count_nonzero(sel))
    if n < 2:
        raise DegenerateInputError(f"need >= 2 valid pixels, got {n}")
    r = 1.0 / depth[sel]
    w_x = flow[:, :, 0][sel]
    w_y = flow[:, :, 1][sel]
    m = _normal_matrix(r, n)
    condition = _condition_2x2(m)
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise DegeneracyError(
            f"normal equations are degenerate (condition {condition:.3e}); "
            "depth is constant over the mask"
        )
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    m_inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
    b_x = np.array([float(np.sum(r * w_x)), float(np.sum(w_x))])
    b_y = np.array([float(np.sum(r * w_y)), float(np.sum(w_y))])
    t_x, c_x = m_inv @ b_x
    t_y, c_y = m_inv @ b_y
    res_x = w_x - (t_x * r + c_x)
    res_y = w_y - (t_y * r + c_y)
    rms = float(np.sqrt(np.mean(res_x**2 + res_y**2)))
    return CalibEstimate(
        t_x_star=float(t_x),
        t_y_star=float(t_y),
        c_x_star=float(c_x),
        c_y_star=float(c_y),
        residual_rms=rms,
        pixel_count=n,
        condition=float(condition),
    )


def convt_flow(depth, est: CalibEstimate):
    """Convert a depth map into the flow implied by an estimate.

    W(p) = (t_x_star / D(p) + c_x_star, t_y_star / D(p) + c_y_star).
    """
    depth = ensure_image(depth, channels=1, name="depth")
    if np.any(depth <= 0.0):
        raise DomainError("depth must be positive to convert into flow")
    r = 1.0 / depth
    u = est.t_x_star * r + est.c_x_star
    v = est.t_y_star * r + est.c_y_star
    return np.stack([u, v], axis=-1)


def estimate_params_jacobian(flow, depth, mask=None) -> CalibJacobian:
    """Closed-form Jacobian of :func:`estimate_params`.

    For the solve theta = M^-1 A^T w with design rows [1/D(p), 1], the flow
    sensitivity of (t, c) at pixel p is M^-1 [r_p, 1]^T, and the depth
    sensitivity follows from differentiating both A and M w.r.t. r_p = 1/D(p)
    and applying dr/dD = -1/D^2.
    """
    flow, depth, mask = _check_inputs(flow, depth, mask)
    sel = _participating(flow, depth, mask)
    n = int(np.count_nonzero(sel))
    if n < 2:
        raise DegenerateInputError(f"need >= 2 valid pixels, got {n}")
    est = estimate_params(flow, depth, mask)  # re-raises on degeneracy
    r_full = np.where(sel, 1.0 / np.where(sel, depth, 1.0), 0.0)
    m = _normal_matrix(r_full[sel], n)
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    inv00 = m[1, 1] / det
    inv01 = -m[0, 1] / det
    inv11 = m[0, 0] / det

    zeros = np.zeros_like(r_full)

    def flow_rows():
        dt = np.where(sel, inv00 * r_full + inv01, zeros)
        dc = np.where(sel, inv01 * r_full + inv11, zeros)
        return dt, dc

    dtx_dwx, dcx_dwx = flow_rows()
    dty_dwy, dcy_dwy = flow_rows()

    def depth_rows(w_comp, t_star, c_star):
        u1 = w_comp - 2.0 * r_full * t_star - c_star
        u2 = -t_star
        drdd = np.where(sel, -(r_full**2), zeros)  # d(1/D)/dD
        dt = np.where(sel, (inv00 * u1 + inv01 * u2) * drdd, zeros)
        dc = np.where(sel, (inv01 * u1 + inv11 * u2) * drdd, zeros)
        return dt, dc

    dtx_dd, dcx_dd = depth_rows(flow[:, :, 0], est.t_x_star, est.c_x_star)
    dty_dd, dcy_dd = depth_rows(flow[:, :, 1], est.t_y_star, est.c_y_star)
    return CalibJacobian(
        dtx_dwx=dtx_dwx,
        dcx_dwx=dcx_dwx,
        dty_dwy=dty_dwy,
        dcy_dwy=dcy_dwy,
        dtx_dd=dtx_dd,
        dcx_dd=dcx_dd,
        dty_dd=dty_dd,
        dcy_dd=dcy_dd,
    )
