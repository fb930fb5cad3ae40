"""Gallery scan kernels with a compiled core and a numpy fallback.

The compiled extension is picked automatically when it imported cleanly.
Set ``OBJSEEK_KERNELS=pure`` to force the numpy backend or
``OBJSEEK_KERNELS=fast`` to make a missing extension a hard error.
"""

import os

from . import pure as _pure

_requested = os.environ.get("OBJSEEK_KERNELS", "").strip().lower()
if _requested not in ("", "fast", "pure"):
    raise ValueError(f"OBJSEEK_KERNELS must be 'fast' or 'pure', got {_requested!r}")

_impl = None
if _requested in ("", "fast"):
    try:
        from . import _fast as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "fast":
            raise
        _impl = None
if _impl is None:
    _impl = _pure

BACKEND = "pure" if _impl is _pure else "fast"

sscan_scores = _impl.sscan_scores
dot_scores = _impl.dot_scores


def backend_name() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND


def backends() -> dict:
    """All importable backends, for the comparison benchmark."""
    found = {"pure": _pure}
    try:
        from . import _fast
        found["fast"] = _fast
    except ImportError:
        pass
    return found
