"""Hot kernels: compiled when the extension is built, numpy otherwise.

Set ``DGRCL_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
if os.environ.get("DGRCL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

dtw = _impl.dtw
dtw_cost_matrices = _impl.dtw_cost_matrices
fft_radix2 = _impl.fft_radix2

__all__ = ["BACKEND", "dtw", "dtw_cost_matrices", "fft_radix2", "_fallback"]
