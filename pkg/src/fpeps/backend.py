"""Selects the compiled helpers when available.

Set ``FPEPS_PURE_PYTHON=1`` to force the pure-Python fallback.
"""

from __future__ import annotations

import os

if os.environ.get("FPEPS_PURE_PYTHON", "") not in ("", "0"):
    from ._pycore import lq, qr, tdot

    COMPILED = False
else:
    try:
        from ._core import lq, qr, tdot

        COMPILED = True
    except ImportError:  # extension not built
        from ._pycore import lq, qr, tdot

        COMPILED = False

__all__ = ["COMPILED", "lq", "qr", "tdot"]
