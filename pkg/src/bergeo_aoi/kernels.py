"""Kernel dispatch: compiled extension when importable, pure Python otherwise.

Set ``BERGEO_AOI_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
power_iterate = _pykernels.power_iterate
simulate_block = _pykernels.simulate_block

if os.environ.get("BERGEO_AOI_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        power_iterate = _core.power_iterate
        simulate_block = _core.simulate_block

__all__ = ["BACKEND", "power_iterate", "simulate_block"]
