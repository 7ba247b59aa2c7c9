"""Target-frame prediction from a trained network."""

from dataclasses import asdict, dataclass

from .codec import latent_poses
from .core.nn import make_rng
from .trainer import clip_latents, latents_to_pixels, sample
from .world.clip import default_split


@dataclass(frozen=True)
class EvalConfig:
    sample_steps: int = 10
    seed: int = 0
    split: int = None  # fixed context length in frames; None uses default_split
    p: int = 2

    def split_for(self, clip):
        return default_split(clip) if self.split is None else self.split

    def header(self):
        return {f"eval.{k}": v for k, v in asdict(self).items()}


def predict_latents(model, clip, n_ctx, steps, seed, p=2, record=None):
    z = clip_latents(clip.frames, p)
    f_mem = n_ctx // 4
    z_mem = z[:, :f_mem]
    shape = (z.shape[0], z.shape[1] - f_mem) + z.shape[2:]
    rng = make_rng([seed, clip.seed])
    return sample(model, z_mem, latent_poses(clip.poses), steps, rng, shape, record=record)


def predict_video(model, clip, n_ctx, steps=10, seed=0, p=2, record=None):
    """Predicted target frames (C, F - n_ctx, H, W) clipped to [0, 1]."""
    z = predict_latents(model, clip, n_ctx, steps, seed, p, record)
    return latents_to_pixels(z, clip.frames.shape[0], p)


def predictor(model, config):
    def fn(clip, n_ctx):
        return predict_video(model, clip, n_ctx, config.sample_steps, config.seed, config.p)

    return fn
