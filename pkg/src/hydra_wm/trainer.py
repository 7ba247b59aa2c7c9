"""Flow-matching training and Euler sampling."""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .codec import encode, latent_poses
from .core.nn import make_rng
from .core.tensor import Tensor, no_grad, sub, tsum
from .errors import UsageError
from .world.clip import default_split


def clip_latents(frames, p=2):
    """Pixels in [0, 1] to codec latents in [-1, 1]."""
    return encode(2.0 * np.asarray(frames) - 1.0, p).values


def latents_to_pixels(z, channels, p=2):
    from .codec import LatentGrid, decode

    return np.clip((decode(LatentGrid(np.asarray(z), channels, 4, p)) + 1.0) / 2.0, 0.0, 1.0)


@dataclass
class TrainSample:
    z0: np.ndarray  # clean target latents (C, f_tgt, h, w)
    z_mem: np.ndarray  # context latents (C, f_mem, h, w)
    c_cam_full: np.ndarray  # (f_mem + f_tgt, 12)
    t: float
    z1: np.ndarray
    z_t: np.ndarray
    v_t: np.ndarray
    seed: object = None


def interpolate(z0, z1, t):
    return t * z0 + (1.0 - t) * z1


def make_train_sample(clip, split, rng, t=None, p=2, seed=None):
    """Noised training pair for ``clip`` with context of ``split`` frames.

    ``split`` of None picks ``default_split``. ``t`` of None draws U[0, 1].
    """
    n_ctx = default_split(clip) if split is None else int(split)
    z = clip_latents(clip.frames, p)
    f_mem = n_ctx // 4
    if n_ctx % 4 or not 0 < f_mem < z.shape[1]:
        raise UsageError(f"split {n_ctx} must be a positive multiple of 4 below {clip.num_frames}")
    z0, z_mem = z[:, f_mem:], z[:, :f_mem]
    t = float(rng.uniform()) if t is None else float(t)
    z1 = rng.standard_normal(z0.shape)
    # t=1 and t=0 must reproduce the endpoints bitwise
    if t == 1.0:
        z_t = z0.copy()
    elif t == 0.0:
        z_t = z1.copy()
    else:
        z_t = interpolate(z0, z1, t)
    return TrainSample(z0, z_mem, latent_poses(clip.poses), t, z1, z_t, z0 - z1, seed)


@dataclass
class OptimState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 3e-4
    warmup: int = 100
    betas: tuple = (0.9, 0.95)
    eps: float = 1e-8


class Adam:
    """Adam with linear warmup to a constant learning rate."""

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.95), eps=1e-8, warmup=100, grad_clip=1.0):
        self.params = dict(params)
        self.grad_clip = grad_clip
        self.state = OptimState(
            {k: np.zeros_like(p.data) for k, p in self.params.items()},
            {k: np.zeros_like(p.data) for k, p in self.params.items()},
            0, lr, warmup, tuple(betas), eps,
        )

    def current_lr(self, step=None):
        s = self.state
        step = s.step + 1 if step is None else step
        if s.warmup <= 0:
            return s.lr
        return s.lr * min(1.0, step / s.warmup)

    def step(self):
        s = self.state
        lr = self.current_lr()
        s.step += 1
        b1, b2 = s.betas
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
        if self.grad_clip:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.grad_clip:
                grads = {k: g * (self.grad_clip / norm) for k, g in grads.items()}
        c1 = 1.0 - b1 ** s.step
        c2 = 1.0 - b2 ** s.step
        for k, p in self.params.items():
            g = grads[k]
            s.m[k] = b1 * s.m[k] + (1.0 - b1) * g
            s.v[k] = b2 * s.v[k] + (1.0 - b2) * g * g
            p.data = p.data - lr * (s.m[k] / c1) / (np.sqrt(s.v[k] / c2) + s.eps)
        return lr


class NonFiniteLoss(FloatingPointError):
    def __init__(self, loss, seeds):
        super().__init__(f"non-finite loss {loss} for batch seeds {seeds}")
        self.seeds = seeds


def batch_loss(model, batch, backward=True):
    """Mean squared velocity error over every element of every sample.

    Samples may differ in shape, so each one is differentiated separately
    and gradients accumulate; the result equals one pass over the batch.
    Returns the loss as a float; ``backward=False`` only evaluates it.
    """
    total = sum(s.z0.size for s in batch)
    acc = 0.0
    for s in batch:
        pred = model(Tensor(s.z_t), s.t, s.c_cam_full, s.z_mem)
        diff = sub(pred, Tensor(s.v_t))
        sse = tsum(diff * diff) * (1.0 / total)
        if backward:
            sse.backward()
        acc += float(sse.data)
    return acc


def train_step(batch, model, optim):
    """One update on ``batch`` (a list of TrainSample). Returns the loss."""
    model.zero_grad()
    loss = batch_loss(model, batch)
    if not math.isfinite(loss):
        raise NonFiniteLoss(loss, [s.seed for s in batch])
    optim.step()
    return loss


@dataclass
class TrainLoop:
    """Deterministic driver: sample seeds derive from (seed, step, index)."""

    model: object
    optim: Adam
    clips: list
    batch_size: int = 4
    seed: int = 0
    splits: list = None
    history: list = field(default_factory=list)

    def batch(self, step):
        out = []
        for b in range(self.batch_size):
            ss = np.random.SeedSequence([self.seed, step, b])
            rng = make_rng(ss)
            i = int(rng.integers(len(self.clips)))
            split = None if self.splits is None else self.splits[i]
            out.append(make_train_sample(self.clips[i], split, rng, seed=(self.seed, step, b)))
        return out

    def run(self, steps, log=None, log_interval=1, checkpoint=None, checkpoint_interval=0):
        start = time.perf_counter()
        while self.optim.state.step < steps:
            step = self.optim.state.step
            lr = self.optim.current_lr()
            loss = train_step(self.batch(step), self.model, self.optim)
            self.history.append(loss)
            done = self.optim.state.step
            if log is not None and done % log_interval == 0:
                log({"step": done, "loss": loss, "lr": lr, "wall": time.perf_counter() - start})
            if checkpoint is not None and checkpoint_interval and done % checkpoint_interval == 0:
                checkpoint(done)
        return self.history


def sample(model, z_mem, c_cam_full, steps, rng, shape=None, z1=None, record=None):
    """Euler-integrate the learned velocity from noise (t=0) to data (t=1).

    ``shape`` is the target latent shape; pass ``z1`` to fix the noise.
    """
    if steps < 1:
        raise UsageError("sampling needs at least one step")
    z = rng.standard_normal(shape) if z1 is None else np.array(z1, dtype=np.float64)
    dt = 1.0 / steps
    with no_grad():
        for k in range(steps):
            u = model(Tensor(z), k * dt, c_cam_full, z_mem, record)
            u = u.data if isinstance(u, Tensor) else np.asarray(u)
            z = z + dt * u
    return z
