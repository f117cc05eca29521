"""Kernel backend selection.

Prefers the compiled extension and falls back to the NumPy implementation
when the extension is missing or EVENTVIT_FORCE_FALLBACK is set.  Both
expose the same four kernels with identical contracts.
"""

from __future__ import annotations

import os

from . import _kernels_fallback

if os.environ.get("EVENTVIT_FORCE_FALLBACK"):
    _impl = _kernels_fallback
    HAVE_NATIVE = False
else:
    try:
        from . import _kernels_native as _impl  # type: ignore[no-redef]
        HAVE_NATIVE = True
    except ImportError:
        _impl = _kernels_fallback
        HAVE_NATIVE = False

BACKEND_NAME = "native" if HAVE_NATIVE else "fallback"

accumulate_events = _impl.accumulate_events
resize_bilinear = _impl.resize_bilinear
warp_affine = _impl.warp_affine
patch_nonzero_counts = _impl.patch_nonzero_counts

KERNEL_NAMES = ("accumulate_events", "resize_bilinear", "warp_affine",
                "patch_nonzero_counts")


def get_backend(name: str):
    """Return the kernel module for 'native' or 'fallback', or None."""
    if name == "fallback":
        return _kernels_fallback
    if name == "native":
        if not HAVE_NATIVE:
            try:
                from . import _kernels_native
                return _kernels_native
            except ImportError:
                return None
        return _impl
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    names = []
    if get_backend("native") is not None:
        names.append("native")
    names.append("fallback")
    return names
