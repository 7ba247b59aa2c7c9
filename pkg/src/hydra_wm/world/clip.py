"""Rendering scenarios into annotated clips, plus event detection and splits."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, UsageError
from .scenario import sprite, subject_position, window_origin


@dataclass
class CameraPoseSeq:
    """Per-frame planar camera poses: rotation (F,3,3) and translation (F,3)."""

    R: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.t)

    def flatten(self):
        """(F, 12): row-major rotation followed by translation."""
        return np.concatenate([self.R.reshape(len(self), 9), self.t], axis=1)

    @classmethod
    def unflatten(cls, c):
        c = np.asarray(c, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 12:
            raise ValueError(f"pose rows must be 12-vectors, got {c.shape}")
        return cls(c[:, :9].reshape(-1, 3, 3).copy(), c[:, 9:].copy())

    @classmethod
    def from_centres(cls, centres, yaw=None):
        centres = np.asarray(centres, dtype=np.float64)
        n = len(centres)
        yaw = np.zeros(n) if yaw is None else np.asarray(yaw, dtype=np.float64)
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.zeros((n, 3, 3))
        R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1], R[:, 2, 2] = c, -s, s, c, 1.0
        t = np.zeros((n, 3))
        t[:, :2] = centres
        return cls(R, t)

    def centres(self):
        return self.t[:, :2].copy()

    def __getitem__(self, sl):
        return CameraPoseSeq(self.R[sl], self.t[sl])


@dataclass
class RenderedClip:
    frames: np.ndarray  # (C, F, H, W) in [0, 1]
    poses: CameraPoseSeq
    windows: np.ndarray  # (F, 4) int: x0, y0, w, h in scene pixels
    boxes: dict  # subject_id -> (F, 4) int: x0, y0, w, h in scene pixels
    visible: dict  # subject_id -> (F,) bool
    events: list  # (subject_id, exit_frame, entry_frame)
    caption: str
    seed: int
    scene_id: int
    track_id: int
    visibility_threshold: float = 0.25
    meta: dict = field(default_factory=dict)

    @property
    def num_frames(self):
        return self.frames.shape[1]

    def frame_box(self, subject_id, frame):
        """Subject box in window coordinates, clipped to the window, or None."""
        x0, y0, w, h = self.boxes[subject_id][frame]
        wx, wy, ww, wh = self.windows[frame]
        a0, b0 = max(x0, wx), max(y0, wy)
        a1, b1 = min(x0 + w, wx + ww), min(y0 + h, wy + wh)
        if a1 <= a0 or b1 <= b0:
            return None
        return int(a0 - wx), int(b0 - wy), int(a1 - a0), int(b1 - b0)


def overlap_fraction(box, window):
    """Fraction of ``box`` area lying inside ``window``; both (x0, y0, w, h)."""
    x0, y0, w, h = box
    wx, wy, ww, wh = window
    iw = max(0, min(x0 + w, wx + ww) - max(x0, wx))
    ih = max(0, min(y0 + h, wy + wh) - max(y0, wy))
    return iw * ih / float(w * h)


def is_visible(box, window, threshold=0.25):
    return overlap_fraction(box, window) >= threshold


def detect_exit_entry(visible, subject_id=None):
    """Maximal invisible runs with a visible frame on each side.

    Returns (subject_id, exit_frame, entry_frame) with exit_frame the first
    invisible frame and entry_frame the first visible frame after the run.
    ``visible`` may be a bool sequence or a ``{subject_id: flags}`` mapping.
    """
    if isinstance(visible, dict):
        out = []
        for sid in sorted(visible):
            out.extend(detect_exit_entry(visible[sid], sid))
        return out
    v = np.asarray(visible, dtype=bool)
    events = []
    seen_visible = False
    run_start = None
    for f, flag in enumerate(v):
        if flag:
            if run_start is not None and seen_visible:
                events.append((subject_id, run_start, f))
            run_start = None
            seen_visible = True
        elif run_start is None:
            run_start = f
    return events


def clip_events(clip):
    return detect_exit_entry(clip.visible)


def _caption(scenario):
    parts = []
    for s in scenario.subjects:
        parts.append(f"a {s.color} {s.shape}")
    who = ", ".join(parts[:-1]) + (" and " if len(parts) > 1 else "") + parts[-1]
    motion = scenario.track.pattern.replace("_", " ")
    return f"{who} moving in scene {scenario.scene.scene_id}; camera {motion}"


def render(scenario, num_frames=None):
    """Rasterise a scenario into an annotated clip (integer sprite placement)."""
    cfg = scenario.config
    F = cfg.num_frames if num_frames is None else int(num_frames)
    if F < 2:
        raise ConfigError(f"num_frames must be >= 2, got {F}")
    W = cfg.window
    bg = scenario.scene.background
    C = bg.shape[0]
    frames = np.empty((C, F, W, W))
    windows = np.zeros((F, 4), dtype=np.int64)
    boxes = {s.subject_id: np.zeros((F, 4), dtype=np.int64) for s in scenario.subjects}
    visible = {s.subject_id: np.zeros(F, dtype=bool) for s in scenario.subjects}
    for f in range(F):
        wx, wy = window_origin(scenario.track, f, F, cfg)
        windows[f] = (wx, wy, W, W)
        img = bg[:, wy:wy + W, wx:wx + W].copy()
        # list order is z-order: later subjects paint over earlier ones
        for s in scenario.subjects:
            x, y = subject_position(s, f, cfg)
            boxes[s.subject_id][f] = (x, y, s.size, s.size)
            visible[s.subject_id][f] = is_visible((x, y, s.size, s.size), windows[f], cfg.visibility_threshold)
            _paste(img, s, f, x - wx, y - wy)
        frames[:, f] = img
    centres = windows[:, :2] + W / 2.0
    clip = RenderedClip(
        frames=np.clip(frames, 0.0, 1.0),
        poses=CameraPoseSeq.from_centres(centres),
        windows=windows,
        boxes=boxes,
        visible=visible,
        events=[],
        caption=_caption(scenario),
        seed=scenario.seed,
        scene_id=scenario.scene.scene_id,
        track_id=scenario.track.track_id,
        visibility_threshold=cfg.visibility_threshold,
    )
    clip.events = detect_exit_entry(visible)
    return clip


def _paste(img, subject, frame, x, y):
    mask, patch = sprite(subject, frame)
    n = subject.size
    H, W = img.shape[1:]
    ys0, xs0 = max(0, -y), max(0, -x)
    ys1, xs1 = min(n, H - y), min(n, W - x)
    if ys1 <= ys0 or xs1 <= xs0:
        return
    m = mask[ys0:ys1, xs0:xs1]
    region = img[:, y + ys0:y + ys1, x + xs0:x + xs1]
    region[:, m] = patch[:, ys0:ys1, xs0:xs1][:, m]


def filter_dataset(clips):
    """Order-preserving subset of clips carrying at least one event."""
    return [c for c in clips if c.events]


@dataclass
class ClipSegment:
    frames: np.ndarray  # (C, n, H, W)
    poses: CameraPoseSeq
    start: int


def split_clip(clip, n_ctx):
    """(context, target) segments at frame ``n_ctx``."""
    F = clip.num_frames
    if not 1 <= n_ctx < F:
        raise UsageError(f"n_ctx must be in [1, {F - 1}], got {n_ctx}")
    ctx = ClipSegment(clip.frames[:, :n_ctx], clip.poses[:n_ctx], 0)
    tgt = ClipSegment(clip.frames[:, n_ctx:], clip.poses[n_ctx:], n_ctx)
    return ctx, tgt


def default_split(clip, stride=4, min_ctx=16, min_tgt=8):
    """Split point (multiple of ``stride``) putting a re-entry in the target.

    Prefers the latest split whose target still contains the entry frame of
    an event that exited inside the context. Falls back to any event
    boundary in the target, then to ``F - min_tgt``.
    """
    F = clip.num_frames
    hi = F - min_tgt
    cands = [n for n in range(hi - hi % stride, min_ctx - 1, -stride) if n > 0]
    for n in cands:
        if any(ex < n <= en for _, ex, en in clip.events):
            return n
    for n in cands:
        if any(ex >= n or en >= n for _, ex, en in clip.events):
            return n
    return cands[0] if cands else max(stride, F - stride)
