"""Central finite-difference gradient checks."""

import numpy as np

from .tensor import no_grad


def numerical_grad(fn, tensor, eps=1e-6, indices=None):
    """Central differences of scalar ``fn()`` wrt entries of ``tensor.data``.

    ``indices`` restricts the probe to selected flat positions; the returned
    array has the tensor's shape with unprobed entries left at zero.
    """
    flat = tensor.data.reshape(-1)
    out = np.zeros_like(flat)
    probe = range(flat.size) if indices is None else indices
    with no_grad():
        for i in probe:
            old = flat[i]
            flat[i] = old + eps
            fp = fn().item()
            flat[i] = old - eps
            fm = fn().item()
            flat[i] = old
            out[i] = (fp - fm) / (2 * eps)
    return out.reshape(tensor.shape)


def relative_error(analytic, numeric):
    """Max abs deviation scaled by the larger gradient magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn, tensors, eps=1e-6, max_entries=None, rng=None):
    """Worst relative error over ``tensors`` between backward and FD.

    ``fn`` must rebuild the graph from the current tensor values and return a
    scalar Tensor. With ``max_entries`` only that many random positions per
    tensor are probed.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        idx = None
        if max_entries is not None and t.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(t.size, size=max_entries, replace=False)
        num = numerical_grad(fn, t, eps, idx)
        if idx is not None:
            analytic = analytic.reshape(-1)[idx]
            num = num.reshape(-1)[idx]
        worst = max(worst, relative_error(analytic, num))
    return worst
