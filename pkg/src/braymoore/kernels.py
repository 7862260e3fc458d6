"""Backend selection for the spectral hot loops.

The compiled extension is preferred. Setting ``BM_PURE_PYTHON=1`` in the
environment forces the numpy fallback, which is also used automatically when
the extension was not built.
"""
import os

if os.environ.get("BM_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _kernels_py as _impl
        BACKEND = "python"

stieltjes = _impl.stieltjes
subordinate = _impl.subordinate
biane_map = _impl.biane_map
biane_invert = _impl.biane_invert

__all__ = ["BACKEND", "stieltjes", "subordinate", "biane_map", "biane_invert"]
