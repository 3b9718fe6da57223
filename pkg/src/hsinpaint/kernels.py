"""Hot-kernel dispatch.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy versions in ``_pykernels`` are used. Setting ``HSINPAINT_PURE_PYTHON=1``
forces the fallback. ``BACKEND`` names the active implementation.
"""

import os

from hsinpaint import _pykernels

if os.environ.get("HSINPAINT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from hsinpaint import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

conv2d = _impl.conv2d
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
nlm_affinity = _impl.nlm_affinity

__all__ = ["BACKEND", "conv2d", "conv2d_grad_input", "conv2d_grad_weight", "nlm_affinity"]
