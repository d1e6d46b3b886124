"""Kernel dispatch: the compiled extension when importable, else numpy.

Set ``WATCH_PURE_PYTHON=1`` to force the numpy path.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("WATCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

ted_raw = _impl.ted_raw
glcm = _impl.glcm
lbp_riu2 = _impl.lbp_riu2

__all__ = ["BACKEND", "ted_raw", "glcm", "lbp_riu2"]
