"""Backend selection for the conv patch gather/scatter.

The compiled extension is used when present; the numpy fallback produces
bitwise-identical results (same scatter-add order), so this choice affects
speed only. ``ROTEQUIV_BACKEND=numpy|native`` forces one side, which the
benchmark and the parity tests use to compare both on one interpreter.
"""

import importlib
import os

from . import fallback

_forced = os.environ.get("ROTEQUIV_BACKEND", "").strip().lower()

if _forced == "numpy":
    native = None
else:
    # import_module rather than `from . import native`: the latter would
    # bind a stale `native` attribute left on this package by an earlier
    # load instead of importing the extension (reload does exactly that).
    try:
        native = importlib.import_module(__name__ + ".native")
    except ImportError as _exc:
        native = None
        if _forced == "native":
            raise ImportError(
                "ROTEQUIV_BACKEND=native but the compiled extension is not "
                "available; build it with `pip install -e .` or drop the override"
            ) from _exc

if native is not None:
    BACKEND = "native"
    im2col = native.im2col
    col2im = native.col2im
else:
    BACKEND = "numpy"
    im2col = fallback.im2col
    col2im = fallback.col2im
