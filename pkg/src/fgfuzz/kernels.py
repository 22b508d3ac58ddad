"""Kernel selection: compiled extension when importable, Python otherwise.

Set ``FGFUZZ_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"

if not os.environ.get("FGFUZZ_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

min_cover = _impl.min_cover
pack_fields = _impl.pack_fields
unpack_fields = _impl.unpack_fields

__all__ = ["BACKEND", "min_cover", "pack_fields", "unpack_fields"]
