"""Hot-kernel backend selection.

The compiled Cython extension is preferred; the pure-numpy twin is used when
the extension is unavailable or when ``BLURKIT_PURE_PYTHON=1`` is set. Both
lanes produce bit-identical results (see tests/test_adaptive_conv.py and
benchmarks/bench_kernels.py).
"""

import os

from . import _numpy

if os.environ.get("BLURKIT_PURE_PYTHON", "0") == "1":
    _impl = _numpy
else:
    try:
        from . import _ext as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _numpy

BACKEND = "numpy" if _impl is _numpy else "compiled"

eac_forward = _impl.eac_forward
eac_grad_field = _impl.eac_grad_field
eac_grad_input = _impl.eac_grad_input
im2col_t = _impl.im2col_t
col2im_t = _impl.col2im_t


def available_backends():
    """Name -> module for every importable lane (used by tests and benchmarks)."""
    lanes = {"numpy": _numpy}
    try:
        from . import _ext

        lanes["compiled"] = _ext
    except ImportError:
        pass
    return lanes
