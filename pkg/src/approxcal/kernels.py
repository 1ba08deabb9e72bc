"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``APPROXCAL_PURE_PYTHON=1`` to force the numpy implementation.
"""

from __future__ import annotations

import os

from . import _kernels_py
from ._kernels_py import N_PARAMS, SAT_SIGNALS  # noqa: F401

_impl = _kernels_py
IMPLEMENTATION = "numpy"

if not os.environ.get("APPROXCAL_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        IMPLEMENTATION = "compiled"

ref_iteration = _impl.ref_iteration
fx_iteration = _impl.fx_iteration


def compiled_module():
    """The compiled kernel module, or ``None`` when it is not built."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels
