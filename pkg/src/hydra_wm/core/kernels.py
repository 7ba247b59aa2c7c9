"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback is used. ``use_backend`` switches explicitly, mainly for tests and
the benchmark script.
"""

import logging

import numpy as np

from . import _kernels_py

log = logging.getLogger(__name__)

try:
    from . import _ext as _native
except ImportError:  # extension not built
    _native = None

_BACKENDS = {"python": _kernels_py}
if _native is not None:
    _BACKENDS["native"] = _native

_active = _native if _native is not None else _kernels_py


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return "native" if _active is _native and _native is not None else "python"


def use_backend(name):
    """Select ``"native"`` or ``"python"``; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    prev = backend_name()
    _active = _BACKENDS[name]
    log.debug("kernel backend -> %s", name)
    return prev


def conv3d_forward(x, w, stride):
    return _active.conv3d_forward(_c(x), _c(w), tuple(int(s) for s in stride))


def conv3d_backward(x, w, g, stride):
    return _active.conv3d_backward(_c(x), _c(w), _c(g), tuple(int(s) for s in stride))


def topk_rows(scores, k):
    return _active.topk_rows(_c(scores), int(k))
