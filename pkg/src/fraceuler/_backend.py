"""Kernel backend selection.

The compiled extension is used when it imports; ``FRACEULER_BACKEND=python``
forces the numpy fallback.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None


def available():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "cython")
    return names


def get_kernels(name=None):
    """Return the kernel module for ``name`` (``"cython"``, ``"python"`` or ``None`` for default)."""
    if name is None:
        name = os.environ.get("FRACEULER_BACKEND", "").strip().lower() or (
            "cython" if _compiled is not None else "python")
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels not built; reinstall with Cython available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def active_name():
    return "python" if get_kernels() is _kernels_py else "cython"
