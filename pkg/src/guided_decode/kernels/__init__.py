"""Decode-step kernels with backend selection at import time.

The compiled Cython module is preferred when it built successfully;
otherwise the pure-numpy fallback is used. Set the environment variable
``GUIDED_DECODE_PURE_PYTHON=1`` to force the fallback (used by the
kernel benchmark and by tests that compare the two backends).
"""
from __future__ import annotations

import os

if os.environ.get("GUIDED_DECODE_PURE_PYTHON"):
    from . import fallback as _impl

    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from . import fallback as _impl  # type: ignore[no-redef]

        BACKEND = "python"

softmax = _impl.softmax
log_softmax = _impl.log_softmax
argmax_low = _impl.argmax_low
topk_low = _impl.topk_low
apply_guidance = _impl.apply_guidance
guided_step = _impl.guided_step

__all__ = [
    "BACKEND",
    "softmax",
    "log_softmax",
    "argmax_low",
    "topk_low",
    "apply_guidance",
    "guided_step",
]
