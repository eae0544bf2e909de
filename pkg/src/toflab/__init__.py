"""Simulation, online calibration and kernel-filter refinement for weakly
calibrated continuous-wave depth + color camera rigs.

Subpackages:
  imaging     rasters, bilinear warping and its gradients, Sobel
  geometry    camera model, depth/flow conversion, misalignment augmentation
  calib       closed-form parameter estimation and its Jacobian
  kpn         per-pixel kernel filtering (six variants) and a direct fitter
  tofsim      transient-level sensor simulation with one-bounce interference
  metrics     mask-aware losses and evaluation protocols
  dataset_io  PFM + JSON persistence, manifests and dataset splitting
  cli         the ``toflab`` command
"""

from .backend import BACKEND, available_backends

__version__ = "0.1.0"

__all__ = ["BACKEND", "available_backends", "__version__"]
