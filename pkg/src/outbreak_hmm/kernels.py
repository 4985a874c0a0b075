"""Kernel backend selection.

The compiled ``_core`` extension is used when importable; otherwise the
pure-Python ``_core_py`` module. Setting ``OUTBREAK_HMM_PURE=1`` forces
the fallback.
"""

import os

from . import _core_py

if os.environ.get("OUTBREAK_HMM_PURE", "") not in ("", "0"):
    _impl = _core_py
    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _core_py
        BACKEND = "python"

forward_log = _impl.forward_log
nb_logpmf = _impl.nb_logpmf
nb_size_derivs = _impl.nb_size_derivs

__all__ = ["BACKEND", "forward_log", "nb_logpmf", "nb_size_derivs"]
