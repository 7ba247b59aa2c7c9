"""PSNR, SSIM and subject-consistency (DSC) metrics, plus run evaluation."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

PSNR_INF = math.inf
CROP_SIZE = 16


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """10 log10(1 / MSE) for signals in [0, 1]; identical inputs give +inf."""
    e = mse(a, b)
    if e == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / e)


def gaussian_taps(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter2(img, taps):
    """Separable valid filtering over the last two axes."""
    n = len(taps)
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=-2) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=-1) @ taps


def ssim(a, b, k1=0.01, k2=0.03, win=11, sigma=1.5, data_range=1.0):
    """Mean SSIM of videos shaped (C, F, H, W) (or any (..., H, W)).

    Gaussian-weighted local statistics over valid windows, averaged per frame
    and channel, then over frames.
    """
    a, b = _pair(a, b)
    if a.shape[-1] < win or a.shape[-2] < win:
        raise DimensionError(f"frames {a.shape[-2:]} smaller than the {win}-tap window")
    g = gaussian_taps(win, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _filter2(a, g), _filter2(b, g)
    saa = _filter2(a * a, g) - mu_a ** 2
    sbb = _filter2(b * b, g) - mu_b ** 2
    sab = _filter2(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    m = num / den
    if np.array_equal(a, b):
        m = np.ones_like(m)
    return float(np.mean(m))


# subject features


def resize_nearest(crop, size=CROP_SIZE):
    """(C, h, w) -> (C, size, size) by nearest-index sampling."""
    C, h, w = crop.shape
    ys = np.minimum((np.arange(size) * h) // size, h - 1)
    xs = np.minimum((np.arange(size) * w) // size, w - 1)
    return crop[:, ys][:, :, xs]


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


class PatchExtractor:
    """Resized crop, flattened, mean-centred and unit-normalised."""

    name = "patch16"

    def __init__(self, size=CROP_SIZE):
        self.size = size

    def __call__(self, crop):
        v = resize_nearest(np.asarray(crop, dtype=np.float64), self.size).reshape(-1)
        return _unit(v - v.mean())


class RandomProjectionExtractor:
    """Fixed seeded linear projection of the patch features."""

    def __init__(self, dim=64, channels=3, size=CROP_SIZE, seed=0):
        self.patch = PatchExtractor(size)
        rng = np.random.Generator(np.random.Philox(seed))
        self.proj = rng.standard_normal((dim, channels * size * size)) / math.sqrt(dim)
        self.name = f"randproj{dim}_s{seed}"

    def __call__(self, crop):
        return _unit(self.proj @ self.patch(crop))


DEFAULT_EXTRACTOR = PatchExtractor()


def cosine(a, b):
    """Cosine of unit-or-zero vectors; two zero vectors count as identical."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0 if na == nb else 0.0
    if np.array_equal(a, b):
        return 1.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def crop(frame, box):
    """frame (C, H, W), box (x0, y0, w, h) in frame coordinates."""
    x0, y0, w, h = box
    return frame[:, y0:y0 + h, x0:x0 + w]


def subject_features(video, boxes, extractor=DEFAULT_EXTRACTOR):
    """Feature per frame where ``boxes[f]`` is not None; returns (frames, feats)."""
    frames, feats = [], []
    for f, box in enumerate(boxes):
        if box is None:
            continue
        frames.append(f)
        feats.append(extractor(crop(video[:, f], box)))
    return frames, feats


def nearest_resample(seq, n):
    """Nearest-index resampling of a sequence to length ``n``."""
    m = len(seq)
    return [seq[min(m - 1, int(round(i * (m - 1) / (n - 1))) if n > 1 else 0)] for i in range(n)]


@dataclass
class DSCResult:
    value: float  # nan when every subject is absent
    per_subject: dict  # subject id -> score or None (absent)


def dsc(pred, ref, boxes, ref_boxes=None, extractor=DEFAULT_EXTRACTOR):
    """Dynamic subject consistency between ``pred`` and ``ref`` videos (C, F, H, W).

    ``boxes`` maps subject id to per-frame boxes (or None when not visible).
    With ``ref_boxes`` None the reference is frame-aligned ground truth and
    only frames where the subject is visible are compared. Otherwise the
    reference is a context video with its own boxes and the two visible
    feature sequences are resampled to a common length by nearest index.
    Per-subject means are averaged over present subjects.
    """
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    aligned = ref_boxes is None
    if aligned and pred.shape != ref.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {ref.shape}")
    scores = {}
    for sid in sorted(boxes):
        _, fp = subject_features(pred, boxes[sid], extractor)
        _, fr = subject_features(ref, (boxes if aligned else ref_boxes).get(sid, []), extractor)
        if not fp or not fr:
            scores[sid] = None
            continue
        if not aligned and len(fp) != len(fr):
            n = max(len(fp), len(fr))
            fp, fr = nearest_resample(fp, n), nearest_resample(fr, n)
        scores[sid] = float(np.mean([cosine(a, b) for a, b in zip(fp, fr)]))
    present = [v for v in scores.values() if v is not None]
    return DSCResult(float(np.mean(present)) if present else math.nan, scores)


def clip_boxes(clip, start, stop):
    """Per-subject window-coordinate boxes for frames [start, stop) of a clip."""
    out = {}
    for sid in sorted(clip.boxes):
        out[sid] = [clip.frame_box(sid, f) if clip.visible[sid][f] else None for f in range(start, stop)]
    return out


# run evaluation

METRICS = ("psnr", "ssim", "dsc_ctx", "dsc_gt")


def evaluate_clip(pred, clip, n_ctx, extractor=DEFAULT_EXTRACTOR):
    """All four metrics for one predicted target video."""
    F = clip.num_frames
    gt = clip.frames[:, n_ctx:]
    ctx = clip.frames[:, :n_ctx]
    tgt_boxes = clip_boxes(clip, n_ctx, F)
    ctx_boxes = clip_boxes(clip, 0, n_ctx)
    return {
        "psnr": psnr(pred, gt),
        "ssim": ssim(pred, gt),
        "dsc_ctx": dsc(pred, ctx, tgt_boxes, ctx_boxes, extractor).value,
        "dsc_gt": dsc(pred, gt, tgt_boxes, None, extractor).value,
    }


def _stats(values):
    v = np.array([x for x in values if not math.isnan(x)], dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan, 0
    if np.isinf(v).any():
        return float(np.mean(v)), math.nan, v.size
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, v.size


def bootstrap_std(values, n=1000, seed=0):
    """Bootstrap standard deviation of the mean of ``values`` (nans dropped)."""
    v = np.array([x for x in values if not math.isnan(x)], dtype=np.float64)
    if v.size < 2:
        return 0.0
    rng = np.random.Generator(np.random.Philox(seed))
    idx = rng.integers(0, v.size, size=(n, v.size))
    return float(v[idx].mean(axis=1).std())


@dataclass
class EvalReport:
    clip_ids: list
    rows: list  # dicts metric -> value, one per clip
    header: dict = field(default_factory=dict)

    def column(self, metric):
        return [r[metric] for r in self.rows]

    def mean(self, metric):
        return _stats(self.column(metric))[0]

    def summary(self):
        return {m: _stats(self.column(m)) for m in METRICS}

    def to_text(self):
        """Tab-separated: header comments, one row per clip and metric, summary."""
        lines = [f"# {k}: {v}" for k, v in sorted(self.header.items())]
        lines.append("clip\tmetric\tvalue")
        for cid, row in zip(self.clip_ids, self.rows):
            for m in METRICS:
                lines.append(f"{cid}\t{m}\t{_fmt(row[m])}")
        lines.append("# summary")
        lines.append("metric\tmean\tstd\tn")
        for m, (mu, sd, n) in self.summary().items():
            lines.append(f"{m}\t{_fmt(mu)}\t{_fmt(sd)}\t{n}")
        return "\n".join(lines) + "\n"


def _fmt(x):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.10g}"


def evaluate_predictions(preds, clips, splits, clip_ids=None, extractor=DEFAULT_EXTRACTOR, header=None):
    rows = [evaluate_clip(p, c, n, extractor) for p, c, n in zip(preds, clips, splits)]
    ids = list(clip_ids) if clip_ids is not None else [str(c.seed) for c in clips]
    return EvalReport(ids, rows, dict(header or {}))


def evaluate_run(model, clips, config=None):
    """Sample every clip's target with ``model`` and score it.

    ``model`` is either a callable ``(clip, n_ctx) -> video`` or a network;
    ``config`` is an ``EvalConfig``.
    """
    from .predict import EvalConfig, predictor

    config = config or EvalConfig()
    fn = model if callable(model) and not hasattr(model, "parameters") else predictor(model, config)
    splits = [config.split_for(c) for c in clips]
    preds = [fn(c, n) for c, n in zip(clips, splits)]
    return evaluate_predictions(preds, clips, splits, header=config.header())
