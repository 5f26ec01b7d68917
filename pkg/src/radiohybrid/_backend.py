"""Kernel backend selection.

The compiled extension is preferred; ``RADIOHYBRID_PURE=1`` forces the NumPy
fallback. ``BACKEND`` names whichever was loaded.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("RADIOHYBRID_PURE", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "numpy"

__all__ = ["kernels", "BACKEND"]
