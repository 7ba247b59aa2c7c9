"""Memory tokens, affinity scoring, Top-K / FOV selection and retrieval attention."""

from dataclasses import dataclass, field

import numpy as np

from ..core import kernels
from ..core.tensor import (
    DimensionError,
    Tensor,
    UsageError,
    concat,
    matmul,
    reshape,
    softmax,
    take,
    transpose,
)


@dataclass
class MemoryTokens:
    """Tokenizer output with per-token provenance.

    values: (C', f', h, w). provenance[j] lists the memory latent frames in
    token j's temporal receptive field; poses[j] holds their flattened poses.
    """

    values: Tensor
    provenance: list
    poses: list = field(default=None)

    @property
    def num_tokens(self):
        return self.values.shape[1]


@dataclass
class RetrievalSelection:
    indices: np.ndarray  # ascending memory-time indices
    scores: np.ndarray = None


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def pool_query(q, hw):
    """Average-pool a (d, H', W') query to (d, h, w)."""
    q = _data(q)
    d, H, W = q.shape
    h, w = hw
    if H % h or W % w:
        raise DimensionError(f"query extent {(H, W)} not divisible into {hw}")
    return q.reshape(d, h, H // h, w, W // w).mean(axis=(2, 4))


def affinity(q, keys):
    """Scores of one target query against every memory key slice.

    q: (d, H', W') target query; keys: (f', d, h, w) memory keys.
    The query is average-pooled to (h, w); each score is the spatial sum of
    channel inner products scaled by 1/sqrt(d).
    """
    keys = _data(keys)
    if keys.ndim != 4:
        raise DimensionError(f"memory keys must be (f', d, h, w), got {keys.shape}")
    q = _data(q)
    if q.shape[0] != keys.shape[1]:
        raise DimensionError(f"query channels {q.shape[0]} vs key channels {keys.shape[1]}")
    qp = pool_query(q, keys.shape[2:])
    d = q.shape[0]
    return np.einsum("cyx,jcyx->j", qp, keys) / np.sqrt(d)


def affinity_rows(queries, keys):
    """``affinity`` for a stack of queries (f_tgt, d, H', W') -> (f_tgt, f')."""
    queries = _data(queries)
    keys = _data(keys)
    n, d, H, W = queries.shape
    h, w = keys.shape[2:]
    if H % h or W % w:
        raise DimensionError(f"query extent {(H, W)} not divisible into {(h, w)}")
    qp = queries.reshape(n, d, h, H // h, w, W // w).mean(axis=(3, 5))
    return np.einsum("icyx,jcyx->ij", qp, keys) / np.sqrt(d)


def topk_select(scores, k):
    """The min(k, n) best indices, ties to the earlier index, ascending."""
    scores = np.asarray(scores, dtype=np.float64)
    if k < 1:
        raise UsageError("k must be >= 1")
    if scores.size == 0:
        return RetrievalSelection(np.zeros(0, dtype=np.int64), scores)
    idx = kernels.topk_rows(scores.reshape(1, -1), k)[0]
    return RetrievalSelection(idx, scores)


def topk_select_rows(scores, k):
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[1] == 0:
        return np.zeros((scores.shape[0], 0), dtype=np.int64)
    return kernels.topk_rows(scores, k)


def token_centres(memory):
    """Mean window centre over each token's source frames."""
    if memory.poses is None or any(p is None or len(p) == 0 for p in memory.poses):
        raise UsageError("memory tokens carry no pose provenance")
    return np.array([np.asarray(p, dtype=np.float64)[:, 9:11].mean(axis=0) for p in memory.poses])


def window_overlap(c1, c2, extent):
    """Intersection area of square windows of side ``extent`` centred at c1, c2."""
    c1 = np.asarray(c1, dtype=np.float64)
    c2 = np.asarray(c2, dtype=np.float64)
    ov = np.clip(extent - np.abs(c1 - c2), 0.0, None)
    return ov[..., 0] * ov[..., 1]


def fov_overlap_select(target_pose, memory, k, extent=16.0):
    """Top-k memory tokens by window overlap with the target view."""
    centres = token_centres(memory)
    tp = np.asarray(target_pose, dtype=np.float64).reshape(-1)
    tc = tp[9:11] if tp.size == 12 else tp[:2]
    scores = window_overlap(centres, tc[None, :], extent)
    return topk_select(scores, k)


def _split_heads(x, heads):
    n, width = x.shape
    return transpose(reshape(x, (n, heads, width // heads)), (1, 0, 2))


def _merge_heads(x):
    heads, n, dh = x.shape
    return reshape(transpose(x, (1, 0, 2)), (n, heads * dh))


def attention(q, k, v, heads):
    """Multi-head softmax attention. q: (n_q, width), k/v: (n_k, width)."""
    dh = q.shape[1] // heads
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    logits = matmul(qh, transpose(kh, (0, 2, 1))) * (1.0 / np.sqrt(dh))
    return _merge_heads(matmul(softmax(logits, axis=-1), vh))


def retrieval_attention(q, k, v, mem_k, mem_v, selections, window_bounds, heads):
    """Attention of each target frame over its retrieved memory plus local window.

    q, k, v: (f_tgt, n, width) target tokens per frame.
    mem_k, mem_v: (f', m, width) memory tokens per temporal index, or None.
    selections: per target frame, the memory indices to include.
    window_bounds(i, f_tgt) -> [lo, hi) of the local temporal window.
    Returns (f_tgt, n, width).
    """
    f_tgt, n, width = q.shape
    outs = []
    for i in range(f_tgt):
        lo, hi = window_bounds(i, f_tgt)
        if hi <= lo:
            raise UsageError("empty local window")
        k_loc = reshape(k[lo:hi], ((hi - lo) * n, width))
        v_loc = reshape(v[lo:hi], ((hi - lo) * n, width))
        idx = np.asarray(selections[i], dtype=np.int64) if mem_k is not None else np.zeros(0, np.int64)
        if idx.size:
            m = mem_k.shape[1]
            k_sel = reshape(take(mem_k, idx, axis=0), (idx.size * m, width))
            v_sel = reshape(take(mem_v, idx, axis=0), (idx.size * m, width))
            k_all = concat([k_sel, k_loc], axis=0)
            v_all = concat([v_sel, v_loc], axis=0)
        else:
            k_all, v_all = k_loc, v_loc
        outs.append(reshape(attention(q[i], k_all, v_all, heads), (1, n, width)))
    return concat(outs, axis=0) if len(outs) > 1 else outs[0]


def dense_attention_reference(q, k, v, heads):
    """Plain numpy multi-head attention, used as an independent oracle."""
    q, k, v = _data(q), _data(k), _data(v)
    nq, width = q.shape
    dh = width // heads
    out = np.empty_like(q)
    for hd in range(heads):
        sl = slice(hd * dh, (hd + 1) * dh)
        logits = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        out[:, sl] = p @ v[:, sl]
    return out
