from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

RETRIEVAL_MODES = ("dynamic_affinity", "fov_overlap", "dense_baseline")


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = 48
    latent_hw: tuple = (8, 8)
    width: int = 64
    heads: int = 4
    depth: int = 2
    mlp_ratio: int = 2
    tokenizer_kernel: tuple = (2, 4, 4)
    tokenizer_stride: tuple = None  # defaults to the kernel (non-overlapping)
    top_k: int = 10
    local_window: int = 5
    pooled: tuple = None  # defaults to the tokenizer's output extent
    retrieval: str = "dynamic_affinity"
    baseline_context: int = None  # latent frames the dense baseline keeps
    max_memory_tokens: int = 64
    pose_scale: float = 1.0 / 32.0
    fov_window: float = 16.0
    seed: int = 0

    def __post_init__(self):
        # normalise list-valued fields coming from JSON
        for name in ("latent_hw", "tokenizer_kernel", "tokenizer_stride", "pooled"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(int(x) for x in v))

    @property
    def stride(self):
        return self.tokenizer_stride or self.tokenizer_kernel

    @property
    def memory_hw(self):
        kh, kw = self.tokenizer_kernel[1:]
        sh, sw = self.stride[1:]
        H, W = self.latent_hw
        if kh > H or kw > W:
            raise ConfigError(f"tokenizer kernel {self.tokenizer_kernel} exceeds latent grid {self.latent_hw}")
        return (H - kh) // sh + 1, (W - kw) // sw + 1

    @property
    def pooled_hw(self):
        return self.pooled or self.memory_hw

    def memory_frames(self, f_mem):
        kt, st = self.tokenizer_kernel[0], self.stride[0]
        if f_mem < kt:
            raise ConfigError(f"{f_mem} memory latent frames < temporal kernel {kt}")
        return (f_mem - kt) // st + 1

    def window_bounds(self, i, n):
        """Clipped local window [lo, hi) around target frame ``i`` of ``n``."""
        lo = max(0, i - (self.local_window - 1) // 2)
        hi = min(n, i + self.local_window // 2 + 1)
        return lo, hi

    def validate(self):
        if self.retrieval not in RETRIEVAL_MODES:
            raise ConfigError(f"retrieval must be one of {RETRIEVAL_MODES}, got {self.retrieval!r}")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.local_window < 1:
            raise ConfigError("local_window must be >= 1")
        if self.width % self.heads:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if len(self.tokenizer_kernel) != 3 or min(self.tokenizer_kernel) < 1 or min(self.stride) < 1:
            raise ConfigError(f"bad tokenizer kernel/stride {self.tokenizer_kernel}/{self.stride}")
        h, w = self.pooled_hw
        H, W = self.latent_hw
        if H % h or W % w:
            raise ConfigError(f"pooled extent {(h, w)} does not divide latent grid {(H, W)}")
        if (h, w) != self.memory_hw:
            raise ConfigError(f"pooled extent {(h, w)} != memory token extent {self.memory_hw}")
        if self.baseline_context is not None and self.baseline_context < 1:
            raise ConfigError("baseline_context must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        d = self.to_dict()
        d.update(changes)
        return type(self).from_dict(d)
