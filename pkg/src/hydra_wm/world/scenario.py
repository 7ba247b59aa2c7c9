"""Procedural scenarios: scenes, subjects, subject paths and camera tracks.

A scenario is sampled independently along four axes (scene, subject set,
per-subject path, camera track) from a single seed. Everything downstream is
a pure function of the scenario.
"""

from dataclasses import dataclass, field

import numpy as np

from ..core.nn import make_rng
from ..errors import ConfigError


COLORS = {
    "red": (0.95, 0.12, 0.10),
    "green": (0.10, 0.90, 0.20),
    "blue": (0.15, 0.25, 0.98),
    "yellow": (0.98, 0.92, 0.10),
    "magenta": (0.92, 0.10, 0.88),
    "cyan": (0.10, 0.92, 0.95),
    "white": (0.99, 0.99, 0.99),
}
COLOR_NAMES = list(COLORS)
SHAPES = ["square", "plus", "diamond", "ring", "triangle", "cross", "disc"]

# waypoint offsets in pixels, traversed at constant speed
PATHS = [
    [(0, 0), (8, 0), (0, 0)],
    [(0, 0), (0, 8), (0, 0)],
    [(0, 0), (6, 6), (0, 0)],
    [(0, 0), (5, 0), (5, 5), (0, 5), (0, 0)],
    [(0, 0), (8, 0), (8, 6)],
    [(0, 0), (3, 4), (6, 0), (9, 4), (12, 0)],
    [(0, 0), (14, 0)],
    [(0, 0), (0, 14)],
    [(0, 0), (6, 0), (3, 5), (0, 0)],
    [(0, 0), (-6, 6), (0, 0)],
]

# camera patterns: keyframes of (time fraction, (dx, dy)) in units of the pan
# amplitude, relative to the start centre; dx is signed toward scene centre
PATTERNS = {
    "pan_h": [(0.0, (0, 0)), (0.12, (0, 0)), (0.35, (1, 0)), (0.62, (1, 0)), (0.85, (0, 0)), (1.0, (0, 0))],
    "pan_v": [(0.0, (0, 0)), (0.12, (0, 0)), (0.35, (0, 1)), (0.62, (0, 1)), (0.85, (0, 0)), (1.0, (0, 0))],
    "pan_diag": [(0.0, (0, 0)), (0.10, (0, 0)), (0.35, (1, 1)), (0.60, (1, 1)), (0.85, (0, 0)), (1.0, (0, 0))],
    "hold_then_return": [(0.0, (0, 0)), (0.30, (0, 0)), (0.40, (1, 0)), (0.72, (1, 0)), (0.82, (0, 0)), (1.0, (0, 0))],
    "orbit_segment": "orbit",
    "zigzag": [(0.0, (0, 0)), (0.10, (0, 0)), (0.30, (1, 0)), (0.45, (1, 0)), (0.60, (0.5, 1)), (0.85, (0, 0)), (1.0, (0, 0))],
    "revisit": [(0.0, (1, 0)), (0.15, (1, 0)), (0.35, (0, 0)), (0.55, (0, 0)), (0.85, (1, 0)), (1.0, (1, 0))],
}
PATTERN_NAMES = list(PATTERNS)
VARIANT_STARTS = [(0.3, 0.3), (0.7, 0.3), (0.3, 0.7), (0.7, 0.7)]


@dataclass(frozen=True)
class WorldConfig:
    scene_size: int = 64
    window: int = 16
    channels: int = 3
    num_scenes: int = 17
    num_subjects: int = 49
    num_paths: int = 10
    num_tracks: int = 28
    min_subjects: int = 1
    max_subjects: int = 3
    sprite_min: int = 3
    sprite_max: int = 5
    num_frames: int = 40
    pan_amplitude: int = 24
    speed_range: tuple = (0.25, 0.5)
    visibility_threshold: float = 0.25

    def validate(self):
        if min(self.scene_size, self.window, self.channels, self.num_frames) <= 0:
            raise ConfigError("extents must be positive")
        if self.window > self.scene_size:
            raise ConfigError(f"window {self.window} larger than scene {self.scene_size}")
        if self.min_subjects < 1 or self.max_subjects < self.min_subjects:
            raise ConfigError(f"subject count range [{self.min_subjects}, {self.max_subjects}] invalid")
        if self.max_subjects > self.num_subjects:
            raise ConfigError("max_subjects exceeds the subject catalogue")
        if self.sprite_min < 1 or self.sprite_max < self.sprite_min:
            raise ConfigError("bad sprite size range")
        if self.sprite_max > self.scene_size:
            raise ConfigError(f"sprite size {self.sprite_max} larger than scene {self.scene_size}")
        if not 1 <= self.num_paths <= len(PATHS):
            raise ConfigError(f"num_paths must be in [1, {len(PATHS)}]")
        if not 1 <= self.num_tracks <= len(PATTERNS) * len(VARIANT_STARTS):
            raise ConfigError(f"num_tracks must be in [1, {len(PATTERNS) * len(VARIANT_STARTS)}]")
        if self.num_scenes < 1 or self.num_subjects < 1:
            raise ConfigError("catalogue sizes must be positive")
        if self.channels != 3:
            raise ConfigError("only RGB (3 channels) is supported")
        return self


@dataclass(frozen=True)
class Scene:
    scene_id: int
    background: np.ndarray = field(repr=False)  # (C, S, S)


@dataclass(frozen=True)
class Subject:
    subject_id: int
    size: int
    shape: str
    color: str
    path_id: int
    anchor: tuple  # top-left of the sprite at frame 0, scene pixels
    speed: float
    flip: tuple  # (fx, fy) in {-1, 1}
    delay: float = 0.0  # frames spent at the anchor before moving
    waypoints: tuple = None  # overrides PATHS[path_id] when set


@dataclass(frozen=True)
class CameraTrack:
    track_id: int
    pattern: str
    start: tuple  # window centre at the start of the pattern
    direction: tuple  # unit signs of the pan, toward scene centre
    amplitude: int
    window: int


@dataclass(frozen=True)
class Scenario:
    seed: int
    scene: Scene
    subjects: tuple
    track: CameraTrack
    config: WorldConfig


def make_scene(scene_id, config):
    """Deterministic background texture for a scene id."""
    rng = make_rng([int(scene_id), 0x5CE4E])
    S, C = config.scene_size, config.channels
    base = rng.uniform(0.2, 0.55, size=C)
    block = int(rng.choice([4, 8]))
    coarse = base[:, None, None] + rng.uniform(-0.12, 0.12, size=(C, S // block + 1, S // block + 1))
    tex = np.repeat(np.repeat(coarse, block, axis=1), block, axis=2)[:, :S, :S]
    yy, xx = np.mgrid[0:S, 0:S]
    freq = rng.uniform(0.15, 0.45, size=2)
    tex = tex + 0.05 * np.sin(freq[0] * xx + freq[1] * yy)[None]
    tex = tex + rng.uniform(-0.03, 0.03, size=(C, S, S))
    return Scene(int(scene_id), np.clip(tex, 0.0, 0.7))


def subject_traits(subject_id, config):
    shape = SHAPES[subject_id % len(SHAPES)]
    color = COLOR_NAMES[(subject_id // len(SHAPES)) % len(COLOR_NAMES)]
    span = config.sprite_max - config.sprite_min + 1
    size = config.sprite_min + (subject_id * 5 + subject_id // 7) % span
    return shape, color, size


def sprite_mask(shape, n):
    yy, xx = np.mgrid[0:n, 0:n]
    c = (n - 1) / 2.0
    if shape == "square":
        m = np.ones((n, n), bool)
    elif shape == "plus":
        m = (np.abs(yy - c) <= 0.5 + (n > 4) * 0.5) | (np.abs(xx - c) <= 0.5 + (n > 4) * 0.5)
    elif shape == "diamond":
        m = np.abs(yy - c) + np.abs(xx - c) <= c + 0.5
    elif shape == "ring":
        m = (yy == 0) | (xx == 0) | (yy == n - 1) | (xx == n - 1)
    elif shape == "triangle":
        m = np.abs(xx - c) <= yy / 2.0 + 0.5
    elif shape == "cross":
        m = (yy == xx) | (yy == n - 1 - xx)
    elif shape == "disc":
        m = (yy - c) ** 2 + (xx - c) ** 2 <= (c + 0.35) ** 2
    else:
        raise ConfigError(f"unknown shape {shape!r}")
    return m


def sprite(subject, frame):
    """(mask, rgb) for a subject at a frame; two-phase brightness animation."""
    mask = sprite_mask(subject.shape, subject.size)
    rgb = np.asarray(COLORS[subject.color], dtype=np.float64)
    if frame % 2:
        rgb = rgb * 0.8
    patch = np.broadcast_to(rgb[:, None, None], (3, subject.size, subject.size)).copy()
    return mask, patch


def _polyline_position(waypoints, dist):
    pts = np.asarray(waypoints, dtype=np.float64)
    for a, b in zip(pts[:-1], pts[1:]):
        seg = float(np.hypot(*(b - a)))
        if dist <= seg and seg > 0:
            return a + (b - a) * (dist / seg)
        dist -= seg
    return pts[-1]


def subject_position(subject, frame, config):
    """Integer top-left of the sprite at ``frame`` (clamped to the scene)."""
    path = subject.waypoints if subject.waypoints is not None else PATHS[subject.path_id]
    offs = [(subject.flip[0] * dx, subject.flip[1] * dy) for dx, dy in path]
    off = _polyline_position(offs, subject.speed * max(0.0, frame - subject.delay))
    hi = config.scene_size - subject.size
    x = int(np.clip(np.floor(subject.anchor[0] + off[0] + 0.5), 0, hi))
    y = int(np.clip(np.floor(subject.anchor[1] + off[1] + 0.5), 0, hi))
    return x, y


def _orbit_offsets():
    ks = []
    for f in np.linspace(0.0, 1.0, 21):
        if f < 0.1 or f > 0.9:
            th = 0.0
        else:
            u = (f - 0.1) / 0.8
            th = np.pi * (1.0 - abs(2 * u - 1.0))  # 0 -> pi -> 0
        ks.append((float(f), (0.5 * (1 - np.cos(th)), 0.5 * np.sin(th))))
    return ks


def pattern_keyframes(pattern):
    ks = PATTERNS[pattern]
    return _orbit_offsets() if ks == "orbit" else ks


def window_origin(track, frame, num_frames, config):
    """Integer top-left of the camera window at ``frame``."""
    ks = pattern_keyframes(track.pattern)
    f = frame / max(num_frames - 1, 1)
    times = [k[0] for k in ks]
    dx = np.interp(f, times, [k[1][0] for k in ks])
    dy = np.interp(f, times, [k[1][1] for k in ks])
    cx = track.start[0] + track.direction[0] * track.amplitude * dx
    cy = track.start[1] + track.direction[1] * track.amplitude * dy
    W = track.window
    hi = config.scene_size - W
    x0 = int(np.clip(np.floor(cx - W / 2 + 0.5), 0, hi))
    y0 = int(np.clip(np.floor(cy - W / 2 + 0.5), 0, hi))
    return x0, y0


def make_track(track_id, config):
    pattern = PATTERN_NAMES[track_id // len(VARIANT_STARTS) % len(PATTERN_NAMES)]
    fx, fy = VARIANT_STARTS[track_id % len(VARIANT_STARTS)]
    S = config.scene_size
    start = (fx * S, fy * S)
    direction = (1 if start[0] < S / 2 else -1, 1 if start[1] < S / 2 else -1)
    return CameraTrack(track_id, pattern, start, direction, config.pan_amplitude, config.window)


def subject_region_centre(track):
    """Where subjects are anchored: the pattern's home (offset (0, 0)) centre."""
    return track.start


def generate_scenario(seed, config=None):
    """Sample a scenario; a pure function of ``(seed, config)``."""
    config = (config or WorldConfig()).validate()
    rng = make_rng([int(seed), 0x5CE7A])
    scene_id = int(rng.integers(config.num_scenes))
    track = make_track(int(rng.integers(config.num_tracks)), config)
    n = int(rng.integers(config.min_subjects, config.max_subjects + 1))
    ids = rng.choice(config.num_subjects, size=n, replace=False)
    home = subject_region_centre(track)
    subjects = []
    for sid in ids:
        shape, color, size = subject_traits(int(sid), config)
        path_id = int(rng.integers(config.num_paths))
        jitter = rng.uniform(-config.window / 4, config.window / 4, size=2)
        anchor = (home[0] - size / 2 + jitter[0], home[1] - size / 2 + jitter[1])
        hi = config.scene_size - size
        anchor = (float(np.clip(anchor[0], 0, hi)), float(np.clip(anchor[1], 0, hi)))
        speed = float(rng.uniform(*config.speed_range))
        flip = tuple(int(v) for v in rng.choice([-1, 1], size=2))
        subjects.append(Subject(int(sid), size, shape, color, path_id, anchor, speed, flip))
    return Scenario(int(seed), make_scene(scene_id, config), tuple(subjects), track, config)


def empty_pose_scenario(seed, config=None):
    """Scenario whose target view was subject-free when it was last seen.

    The camera opens on view B (empty), pans to view A where a subject
    starts, holds, then returns to B. Meanwhile the subject walks from A to
    B, so it re-enters at B, while the context frames posed nearest to B show
    no subject.
    """
    config = (config or WorldConfig()).validate()
    rng = make_rng([int(seed), 0xE4B7])
    scene_id = int(rng.integers(config.num_scenes))
    variant = int(rng.integers(len(VARIANT_STARTS)))
    track_id = PATTERN_NAMES.index("revisit") * len(VARIANT_STARTS) + variant
    track = make_track(track_id, config)
    sid = int(rng.integers(config.num_subjects))
    shape, color, size = subject_traits(sid, config)
    home = track.start
    dist = float(track.amplitude)
    anchor = (home[0] - size / 2, home[1] - size / 2 + float(rng.uniform(-3, 3)))
    F = config.num_frames - 1
    # linger at A until the camera has left, then hurry to B and arrive about
    # when the camera does
    delay = float(rng.uniform(0.68, 0.72)) * F
    speed = dist / (float(rng.uniform(0.84, 0.88)) * F - delay)
    subj = Subject(sid, size, shape, color, -1, anchor, speed, (track.direction[0], 1),
                   delay=delay, waypoints=((0, 0), (dist, 0)))
    return Scenario(int(seed), make_scene(scene_id, config), (subj,), track, config)
