"""Pure numpy implementations of the hot kernels.

These are the reference path and the fallback when the compiled extension
is unavailable. Signatures match ``hydra_wm.core._ext`` exactly.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _patches(x, ksize, stride):
    kt, kh, kw = ksize
    st, sh, sw = stride
    win = sliding_window_view(x, (kt, kh, kw), axis=(1, 2, 3))
    return win[:, ::st, ::sh, ::sw]


def conv3d_forward(x, w, stride):
    """Valid strided 3D convolution (cross-correlation).

    x: (C, T, H, W), w: (O, C, kt, kh, kw) -> (O, T', H', W')
    """
    patches = _patches(x, w.shape[2:], stride)
    return np.ascontiguousarray(
        np.tensordot(w, patches, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    )


def conv3d_backward(x, w, g, stride):
    """Return (grad_x, grad_w) for ``conv3d_forward`` with upstream grad ``g``."""
    kt, kh, kw = w.shape[2:]
    st, sh, sw = stride
    patches = _patches(x, (kt, kh, kw), stride)
    grad_w = np.ascontiguousarray(np.tensordot(g, patches, axes=([1, 2, 3], [1, 2, 3])))
    # cols[c, a, b, e, t, y, x] = sum_o w[o, c, a, b, e] * g[o, t, y, x]
    cols = np.tensordot(w, g, axes=([0], [0]))
    _, To, Ho, Wo = g.shape
    grad_x = np.zeros_like(x)
    for a in range(kt):
        for b in range(kh):
            for e in range(kw):
                grad_x[:, a:a + st * To:st, b:b + sh * Ho:sh, e:e + sw * Wo:sw] += cols[:, a, b, e]
    return grad_x, grad_w


def topk_rows(scores, k):
    """Indices of the k largest entries per row, ascending.

    Ties go to the smaller index. Rows with fewer than k entries return all
    indices. scores: (R, N) float64 -> (R, min(k, N)) int64
    """
    n = scores.shape[1]
    k = min(k, n)
    # stable sort on the negation keeps equal scores in index order
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return np.sort(order, axis=1).astype(np.int64)
