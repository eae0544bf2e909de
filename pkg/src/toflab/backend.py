"""Kernel backend selection.

The hot per-pixel kernels exist twice: a compiled Cython extension
(``toflab._kernels``) and a numpy reference (``toflab._kernels_np``).  The
extension is preferred when importable; set ``TOFLAB_BACKEND=python`` to force
the numpy reference or ``TOFLAB_BACKEND=compiled`` to fail loudly when the
extension is missing.
"""

from __future__ import annotations

import os

from . import _kernels_np

_CHOICES = ("auto", "python", "compiled")


def _load_compiled():
    from . import _kernels  # noqa: PLC0415 - optional extension

    return _kernels


def _select():
    requested = os.environ.get("TOFLAB_BACKEND", "auto").lower()
    if requested not in _CHOICES:
        raise ValueError(f"TOFLAB_BACKEND must be one of {_CHOICES}, got {requested!r}")
    if requested == "python":
        return _kernels_np, "python"
    try:
        return _load_compiled(), "compiled"
    except ImportError:
        if requested == "compiled":
            raise
        return _kernels_np, "python"


kernels, BACKEND = _select()


def available_backends():
    """Names of the backends importable in this environment."""
    names = ["python"]
    try:
        _load_compiled()
    except ImportError:
        pass
    else:
        names.append("compiled")
    return names


def kernels_for(name):
    """Kernel module for an explicit backend name ('python' or 'compiled')."""
    if name == "python":
        return _kernels_np
    if name == "compiled":
        return _load_compiled()
    raise ValueError(f"unknown backend {name!r}")
