"""RK4 kernels: the compiled extension when it imports, numpy otherwise.

Set ``SLOWFAST_PURE_PYTHON=1`` to force the fallback.
"""

import os

BACKEND = "python"
if os.environ.get("SLOWFAST_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._rk4core import rk4_linear_trig, rk4_normal_form
        BACKEND = "cython"
    except ImportError:
        pass
if BACKEND == "python":
    from ._fallback import rk4_linear_trig, rk4_normal_form

from . import _fallback as fallback

__all__ = ["rk4_linear_trig", "rk4_normal_form", "BACKEND", "fallback"]
