"""Backend selection for the numeric inner loops.

The compiled Cython module is preferred. Setting ``CLIPVIS_BACKEND=python``
forces the numpy fallback; ``CLIPVIS_BACKEND=cython`` makes a missing
extension an import error instead of a silent fallback.
"""

import os

from clipvis import _pykernels

_requested = os.environ.get("CLIPVIS_BACKEND", "").strip().lower()

if _requested not in ("", "python", "cython"):
    raise ImportError(f"CLIPVIS_BACKEND must be 'python' or 'cython', got {_requested!r}")

_impl = _pykernels
BACKEND = "python"
if _requested != "python":
    try:
        from clipvis import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise

soft_iou_sums = _impl.soft_iou_sums
soft_iou_mean = _impl.soft_iou_mean
soft_iou_grad = _impl.soft_iou_grad
im2col = _impl.im2col
deform_im2col = _impl.deform_im2col


def available_backends():
    """Return ``{name: module}`` for every backend importable in this process."""
    found = {"python": _pykernels}
    try:
        from clipvis import _ckernels

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
