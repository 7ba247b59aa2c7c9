"""Procedural 2D exit-entry world: scenarios, rendering, events, storage."""

from .clip import (
    CameraPoseSeq,
    ClipSegment,
    RenderedClip,
    clip_events,
    default_split,
    detect_exit_entry,
    filter_dataset,
    is_visible,
    overlap_fraction,
    render,
    split_clip,
)
from .scenario import (
    ConfigError,
    Scenario,
    WorldConfig,
    empty_pose_scenario,
    generate_scenario,
    make_scene,
    sprite,
    subject_position,
    window_origin,
)
