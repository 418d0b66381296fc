"""Kernel backend selection.

The compiled extension is used when it imports cleanly; setting the
environment variable ``GII_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _pykernels

if os.environ.get("GII_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        kernels = _pykernels
        BACKEND = "python"

smooth_binary = kernels.smooth_binary
pair_dots = kernels.pair_dots
smooth_trinomial = kernels.smooth_trinomial
smooth_selection = kernels.smooth_selection
