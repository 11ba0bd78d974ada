"""Backend selection for the per-pixel metric kernels.

The compiled extension ``filmfuse._kernels`` is used when it was built;
otherwise the numpy implementation in ``filmfuse._kernels_py`` takes over.
Set ``FILMFUSE_KERNELS=python`` to force the fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("FILMFUSE_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sobel(img, backend=None):
    """3x3 Sobel responses with replicate borders, returns ``(gx, gy)``."""
    return _get(backend).sobel(_f64(img))


def correlate_separable(img, taps, backend=None):
    """Correlate rows then columns with ``taps`` under half-sample reflection."""
    return _get(backend).correlate_separable(_f64(img), _f64(taps))


def qabf_map(gs, as_, gf, af, consts, backend=None):
    """Per-pixel edge-preservation values of a fused image w.r.t. one source."""
    return _get(backend).qabf_map(_f64(gs), _f64(as_), _f64(gf), _f64(af), *consts)


def _get(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        if BACKEND != "cython":
            raise RuntimeError("compiled kernels are not available")
        return _impl
    raise ValueError(f"unknown kernel backend {backend!r}")
