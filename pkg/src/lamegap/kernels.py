"""Kernel selector: the compiled extension when available, numpy otherwise.

Set ``LAME_GAP_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("LAME_GAP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _module(impl):
    """``impl`` may be None (selected backend), "cython", "python" or a module."""
    if impl is None:
        return _impl
    if impl == "python":
        return _kernels_py
    if impl == "cython":
        from . import _kernels

        return _kernels
    return impl


def size_field(pts, samples, sizes, grade, cap, impl=None):
    """Lipschitz size function built from boundary samples (see meshgen)."""
    mod = _module(impl)
    order = np.argsort(sizes, kind="stable")
    return mod.size_field(
        np.ascontiguousarray(pts, dtype=np.float64),
        np.ascontiguousarray(samples[order], dtype=np.float64),
        np.ascontiguousarray(sizes[order], dtype=np.float64),
        float(grade), float(cap))


def element_gradients(nodes, tris, impl=None):
    mod = _module(impl)
    return mod.element_gradients(np.ascontiguousarray(nodes, dtype=np.float64),
                                 np.ascontiguousarray(tris, dtype=np.int64))


def cst_stiffness(b, c, area, lam, mu, impl=None):
    mod = _module(impl)
    ne = len(area)
    lam = np.ascontiguousarray(np.broadcast_to(np.asarray(lam, dtype=float), (ne,)))
    mu = np.ascontiguousarray(np.broadcast_to(np.asarray(mu, dtype=float), (ne,)))
    return mod.cst_stiffness(np.ascontiguousarray(b), np.ascontiguousarray(c),
                             np.ascontiguousarray(area), lam, mu)
