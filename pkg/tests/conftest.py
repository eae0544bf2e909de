"""Shared fixtures and small instance builders."""

import numpy as np
import pytest

from toflab.geometry import DataSample, WeakCalibParams


def smooth_depth(rng, h, w, base=2.0, amp=0.8):
    """Positive, spatially smooth depth map with non-trivial variation."""
    ys, xs = np.mgrid[0:h, 0:w]
    z = base + amp * np.sin(2.0 * np.pi * xs / w) * np.cos(2.0 * np.pi * ys / h)
    z += 0.2 * rng.uniform(size=(h, w)).round(3)
    return np.maximum(z, 0.3)


def make_sample(seed, h=24, w=32, f=120.0):
    """Hand-assembled aligned sample with smooth depth and random color."""
    rng = np.random.default_rng(seed)
    gt = smooth_depth(rng, h, w)
    rgb = rng.uniform(0.1, 0.9, size=(h, w, 3))
    amplitude = rng.uniform(0.2, 1.0, size=(h, w))
    mask = np.ones((h, w), dtype=bool)
    return DataSample(
        rgb=rgb,
        amplitude=amplitude,
        tof_depth=gt + 0.05 * rng.standard_normal((h, w)),
        gt_depth=gt,
        mask=mask,
        calib=WeakCalibParams(f_x=f, f_y=f),
        aligned=True,
        seed=seed,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
