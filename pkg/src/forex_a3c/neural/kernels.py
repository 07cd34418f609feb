"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``FOREX_A3C_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py as python

compiled = None
if os.environ.get("FOREX_A3C_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

impl = compiled if compiled is not None else python

BACKEND = impl.BACKEND
lstm_forward = impl.lstm_forward
lstm_backward = impl.lstm_backward
adam_update = impl.adam_update
