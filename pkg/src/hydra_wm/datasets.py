"""Clip collections: in-memory generation, on-disk datasets and test splits."""

import json
from pathlib import Path

import numpy as np

from .world.clip import default_split, render
from .world.scenario import empty_pose_scenario, generate_scenario
from .world.storage import read_clip, write_clip

MANIFEST = "manifest.json"


def event_clips(n, seed_start, config, empty_pose_fraction=0.0, accept=None, max_tries=None):
    """First ``n`` event-bearing clips from consecutive seeds.

    A seed's clip comes from the empty-pose generator when a seed-derived
    draw falls below ``empty_pose_fraction``. ``accept`` is an optional
    extra filter.
    """
    out = []
    seed = seed_start
    limit = max_tries if max_tries is not None else 50 * max(n, 1) + 100
    while len(out) < n:
        if seed - seed_start >= limit:
            raise RuntimeError(f"only {len(out)} of {n} clips found in {limit} seeds from {seed_start}")
        use_empty = empty_pose_fraction > 0 and (
            np.random.Generator(np.random.Philox([seed, 0xF4AC])).uniform() < empty_pose_fraction)
        scen = empty_pose_scenario(seed, config) if use_empty else generate_scenario(seed, config)
        clip = render(scen)
        clip.meta["generator"] = "empty_pose" if use_empty else "random"
        if clip.events and (accept is None or accept(clip)):
            out.append(clip)
        seed += 1
    return out


def truncation_split_ok(clip, keep_frames, n_ctx=None):
    """True when a subject is out of view through the last ``keep_frames``
    context frames and re-enters in the target, so a context truncated to
    those frames holds no view of it."""
    n = default_split(clip) if n_ctx is None else n_ctx
    return any(ex <= n - keep_frames and en >= n for _, ex, en in clip.events)


def empty_pose_split_ok(clip, n_ctx=None):
    """True when a subject re-enters in the target and the context frames
    posed nearest to the re-entry view show no subject at all."""
    n = default_split(clip) if n_ctx is None else n_ctx
    entries = [en for _, ex, en in clip.events if ex < n <= en]
    if not entries:
        return False
    centres = clip.poses.centres()
    dist = np.abs(centres[:n] - centres[entries[0]]).max(axis=1)
    nearest = np.flatnonzero(dist == dist.min())
    return not any(clip.visible[sid][f] for sid in clip.visible for f in nearest)


def train_clips(config):
    d = config.data
    return event_clips(d.num_train, d.seed, config.world, d.empty_pose_fraction)


def test_clips(config, n=None):
    """Held-out clips from a disjoint seed range, filtered per ``test_kind``."""
    d = config.data
    n = d.num_test if n is None else n
    start = d.seed + d.test_seed_offset
    if d.test_kind == "empty_pose":
        return event_clips(n, start, config.world, 1.0, empty_pose_split_ok)
    if d.test_kind == "truncation":
        keep = 4 * (config.model.baseline_context or 1)
        return event_clips(n, start, config.world, 0.0, lambda c: truncation_split_ok(c, keep))
    return event_clips(n, start, config.world)


def write_dataset(directory, clips, header):
    """Write clips plus a manifest; returns the manifest dict."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"creating {directory}: {exc}") from exc
    entries = []
    for clip in clips:
        name = f"clip_{clip.seed:08d}"
        write_clip(directory, name, clip)
        entries.append({"name": name, "seed": int(clip.seed), "event_count": len(clip.events),
                        "generator": clip.meta.get("generator", "random")})
    manifest = dict(header)
    manifest["clips"] = entries
    text = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    try:
        (directory / MANIFEST).write_text(text)
    except OSError as exc:
        raise OSError(f"writing {directory / MANIFEST}: {exc}") from exc
    return manifest


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"reading {path}: {exc}") from exc


def read_dataset(directory):
    manifest = read_manifest(directory)
    return manifest, [read_clip(directory, e["name"]) for e in manifest["clips"]]
