"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over. ``AFFSEG_BACKEND=python`` forces the fallback,
``AFFSEG_BACKEND=cython`` makes a missing extension an error.
"""
import os

from . import _fallback

_requested = os.environ.get("AFFSEG_BACKEND", "").lower()

try:
    if _requested == "python":
        raise ImportError("fallback requested")
    from . import _kernels as _compiled
except ImportError:
    if _requested == "cython":
        raise
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

DEFAULT_BACKEND = "cython" if _compiled is not None else "python"


def get(name=None):
    """Kernel module for ``name`` (default: the import-time selection)."""
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
