"""The retrieval-augmented DiT: camera injection, memory tokenizer and blocks.

Internal token layout is (frames, cells, width): cells run over the latent
grid row-major, width is the channel axis.
"""

import numpy as np

from ..core.nn import MLP, LayerNorm, Linear, Module, make_rng, parameter
from ..core.tensor import (
    DimensionError,
    Tensor,
    add,
    as_tensor,
    concat,
    conv3d,
    mul,
    reshape,
    transpose,
)
from ..errors import ConfigError
from .config import ModelConfig
from .retrieval import (
    MemoryTokens,
    affinity_rows,
    attention,
    fov_overlap_select,
    retrieval_attention,
    topk_select_rows,
)


def normalise_poses(c_cam, scale):
    c = np.array(c_cam, dtype=np.float64)
    c[:, 9:] *= scale
    return c


class CameraEncoder(Module):
    """MLP from flattened 12-dim poses to the trunk width."""

    def __init__(self, width, rng, pose_scale=1.0 / 32.0):
        self.mlp = MLP(12, width, width, rng)
        self.pose_scale = pose_scale

    def forward(self, c_cam):
        c = np.asarray(c_cam, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 12:
            raise DimensionError(f"camera condition must be (f, 12), got {c.shape}")
        return self.mlp(Tensor(normalise_poses(c, self.pose_scale)))


def encode_and_inject_camera(h_in, c_cam, encoder):
    """Add the encoded pose of each frame to every spatial cell of that frame.

    h_in: (f, cells, width) tokens; c_cam: (f, 12).
    """
    c_cam = np.asarray(c_cam)
    if c_cam.shape[0] != h_in.shape[0]:
        raise DimensionError(f"{c_cam.shape[0]} poses for {h_in.shape[0]} latent frames")
    cam = encoder(c_cam)
    return add(h_in, reshape(cam, (cam.shape[0], 1, cam.shape[1])))


class MemoryTokenizer(Module):
    """Strided valid 3D convolution over memory features, with provenance."""

    def __init__(self, channels_in, channels_out, kernel, stride, rng):
        kt, kh, kw = kernel
        fan_in = channels_in * kt * kh * kw
        self.kernel = parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(channels_out, channels_in, kt, kh, kw)))
        self.bias = parameter(np.zeros(channels_out))
        self.stride = tuple(stride)

    def forward(self, z_mem, poses=None):
        """z_mem: (C, f_mem, H, W). poses: optional (f_mem, 12) latent poses."""
        z_mem = as_tensor(z_mem)
        kt = self.kernel.shape[2]
        st = self.stride[0]
        if z_mem.ndim != 4 or any(k > n for k, n in zip(self.kernel.shape[2:], z_mem.shape[1:])):
            raise ConfigError(f"memory latents {z_mem.shape} incompatible with kernel {self.kernel.shape[2:]}")
        if z_mem.shape[0] != self.kernel.shape[1]:
            raise ConfigError(f"memory channels {z_mem.shape[0]} vs tokenizer input {self.kernel.shape[1]}")
        m = conv3d(z_mem, self.kernel, self.stride)
        m = add(m, reshape(self.bias, (-1, 1, 1, 1)))
        n = m.shape[1]
        prov = [list(range(j * st, j * st + kt)) for j in range(n)]
        pose_prov = None
        if poses is not None:
            poses = np.asarray(poses, dtype=np.float64)
            pose_prov = [poses[p] for p in prov]
        return MemoryTokens(m, prov, pose_prov)


def tokenize_memory(tokenizer, z_mem, poses=None):
    return tokenizer(z_mem, poses)


def timestep_features(t, dim):
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = 1000.0 * float(t) * freqs
    return np.concatenate([np.cos(ang), np.sin(ang)])


def modulate(x, shift, scale):
    return add(mul(x, add(scale, 1.0)), shift)


class DiTBlock(Module):
    """Pre-norm block: modulated retrieval attention, projector, FFN."""

    def __init__(self, cfg, rng):
        w = cfg.width
        self.cfg = cfg
        self.norm1 = LayerNorm(w)
        self.norm_mem = LayerNorm(w)
        self.qkv = Linear(w, 3 * w, rng)
        self.attn_out = Linear(w, w, rng)
        self.norm2 = LayerNorm(w)
        self.projector = Linear(w, w, rng)
        self.norm3 = LayerNorm(w)
        self.ffn = MLP(w, cfg.mlp_ratio * w, w, rng)
        self.ada = Linear(w, 6 * w, rng, zero=True)

    def _mod(self, temb):
        m = self.ada(temb)
        w = self.cfg.width
        return [m[:, k * w:(k + 1) * w] for k in range(6)]

    def forward(self, x, temb, memory=None, fixed_selection=None, record=None):
        """x: (f, cells, width). memory: (f', m, width) tokens or None.

        ``fixed_selection`` supplies per-frame memory indices (FOV mode);
        otherwise indices come from the affinity Top-K. In dense mode the
        attention is full over every token of x.
        """
        cfg = self.cfg
        f, n, w = x.shape
        shift1, scale1, gate1, shift2, scale2, gate2 = self._mod(temb)

        h = modulate(self.norm1(x), shift1, scale1)
        qkv = self.qkv(h)
        q, k, v = qkv[..., :w], qkv[..., w:2 * w], qkv[..., 2 * w:]
        if cfg.retrieval == "dense_baseline":
            flat = lambda t: reshape(t, (f * n, w))  # noqa: E731
            a = reshape(attention(flat(q), flat(k), flat(v), cfg.heads), (f, n, w))
        else:
            mem_k = mem_v = None
            sel = [np.zeros(0, np.int64)] * f
            if memory is not None and memory.shape[0] > 0:
                mk = self.qkv(self.norm_mem(memory))
                mem_k, mem_v = mk[..., w:2 * w], mk[..., 2 * w:]
                if fixed_selection is not None:
                    sel = fixed_selection
                else:
                    sel = self.select(q, mem_k)
            if record is not None:
                record.append([np.asarray(s).tolist() for s in sel])
            a = retrieval_attention(q, k, v, mem_k, mem_v, sel, cfg.window_bounds, cfg.heads)
        x = add(x, mul(gate1, self.attn_out(a)))
        x = add(x, self.projector(self.norm2(x)))
        h = modulate(self.norm3(x), shift2, scale2)
        x = add(x, mul(gate2, self.ffn(h)))
        return x

    def select(self, q, mem_k):
        """Per-frame Top-K indices from pooled-query / memory-key affinity."""
        cfg = self.cfg
        f, n, w = q.shape
        H, W = cfg.latent_hw
        h, wd = cfg.pooled_hw
        queries = q.data.reshape(f, H, W, w).transpose(0, 3, 1, 2)
        keys = mem_k.data.reshape(mem_k.shape[0], h, wd, w).transpose(0, 3, 1, 2)
        scores = affinity_rows(queries, keys)
        return list(topk_select_rows(scores, cfg.top_k))


class HybridMemoryDiT(Module):
    def __init__(self, cfg=None):
        cfg = (cfg or ModelConfig()).validate()
        self.cfg = cfg
        rng = make_rng([cfg.seed, 0xD17])
        w = cfg.width
        H, W = cfg.latent_hw
        self.embed = Linear(cfg.latent_channels, w, rng)
        self.pos = parameter(rng.normal(0.0, 0.02, size=(H * W, w)))
        self.camera = CameraEncoder(w, rng, cfg.pose_scale)
        self.time_mlp = MLP(w, w, w, rng)
        if cfg.retrieval != "dense_baseline":
            self.tokenizer = MemoryTokenizer(w, w, cfg.tokenizer_kernel, cfg.stride, rng)
            self.mem_time = parameter(rng.normal(0.0, 0.02, size=(cfg.max_memory_tokens, w)))
        self.blocks = [DiTBlock(cfg, rng) for _ in range(cfg.depth)]
        self.norm_out = LayerNorm(w)
        self.ada_out = Linear(w, 2 * w, rng, zero=True)
        self.out = Linear(w, cfg.latent_channels, rng, zero=True)

    # layout helpers
    def _tokens(self, z):
        C, f, H, W = z.shape
        if (H, W) != tuple(self.cfg.latent_hw) or C != self.cfg.latent_channels:
            raise DimensionError(f"latents {z.shape} do not match config grid {self.cfg.latent_hw} x {self.cfg.latent_channels}")
        return reshape(transpose(as_tensor(z), (1, 2, 3, 0)), (f, H * W, C))

    def _untokens(self, x):
        f, n, C = x.shape
        H, W = self.cfg.latent_hw
        return transpose(reshape(x, (f, H, W, C)), (3, 0, 1, 2))

    def memory_tokens(self, mem_feats, mem_poses):
        """Tokenize embedded memory features (f_mem, cells, width)."""
        cfg = self.cfg
        f_mem, n, w = mem_feats.shape
        H, W = cfg.latent_hw
        grid = transpose(reshape(mem_feats, (f_mem, H, W, w)), (3, 0, 1, 2))
        mt = self.tokenizer(grid, mem_poses)
        m = mt.values  # (w, f', h, wd)
        nf = m.shape[1]
        if nf > cfg.max_memory_tokens:
            raise ConfigError(f"{nf} memory tokens exceed max_memory_tokens={cfg.max_memory_tokens}")
        toks = reshape(transpose(m, (1, 2, 3, 0)), (nf, m.shape[2] * m.shape[3], w))
        toks = add(toks, reshape(self.mem_time[:nf], (nf, 1, w)))
        return toks, mt

    def forward(self, z_t, t, c_cam_full, z_mem, record=None):
        """Velocity prediction for noisy target latents ``z_t`` at time ``t``.

        z_t: (C, f_tgt, H, W); z_mem: (C, f_mem, H, W) clean context latents;
        c_cam_full: (f_mem + f_tgt, 12) poses for memory then target frames.
        ``record`` (a list) receives per-block selected memory indices.
        """
        cfg = self.cfg
        z_mem = np.asarray(z_mem.data if isinstance(z_mem, Tensor) else z_mem, dtype=np.float64)
        f_mem = z_mem.shape[1]
        f_tgt = z_t.shape[1]
        c_cam_full = np.asarray(c_cam_full, dtype=np.float64)
        if c_cam_full.shape[0] != f_mem + f_tgt:
            raise DimensionError(f"{c_cam_full.shape[0]} poses for {f_mem}+{f_tgt} latent frames")

        x = add(self.embed(self._tokens(z_t)), self.pos)
        x = encode_and_inject_camera(x, c_cam_full[f_mem:], self.camera)
        temb = self.time_mlp(Tensor(timestep_features(t, cfg.width)[None, :]))

        memory, fixed = None, None
        n_ctx = 0
        if f_mem > 0:
            m = add(self.embed(self._tokens(z_mem)), self.pos)
            m = encode_and_inject_camera(m, c_cam_full[:f_mem], self.camera)
            if cfg.retrieval == "dense_baseline":
                keep = f_mem if cfg.baseline_context is None else min(cfg.baseline_context, f_mem)
                n_ctx = keep
                x = concat([m[f_mem - keep:], x], axis=0)
            else:
                memory, mt = self.memory_tokens(m, c_cam_full[:f_mem])
                if cfg.retrieval == "fov_overlap":
                    fixed = [fov_overlap_select(p, mt, cfg.top_k, cfg.fov_window).indices
                             for p in c_cam_full[f_mem:]]
        for block in self.blocks:
            x = block(x, temb, memory, fixed, record)
        if n_ctx:
            x = x[n_ctx:]
        shift, scale = (lambda m: (m[:, :cfg.width], m[:, cfg.width:]))(self.ada_out(temb))
        x = self.out(modulate(self.norm_out(x), shift, scale))
        return self._untokens(x)
