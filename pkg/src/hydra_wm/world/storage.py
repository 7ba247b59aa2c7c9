"""On-disk clip format: raw tensor block + JSON sidecar.

Tensor block layout (little-endian), see docs/formats.md:

    magic   4 bytes  b"HWMT"
    version u16      1
    dtype   u8       1 = float64
    ndim    u8
    dims    ndim x u32
    data    prod(dims) x float64, row-major
"""

import json
import struct
from pathlib import Path

import numpy as np

from .clip import CameraPoseSeq, RenderedClip

MAGIC = b"HWMT"
VERSION = 1
DTYPE_F64 = 1


class FormatError(ValueError):
    """A file does not follow the documented layout."""


def tensor_to_bytes(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = MAGIC + struct.pack("<HBB", VERSION, DTYPE_F64, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def tensor_from_bytes(buf):
    if buf[:4] != MAGIC:
        raise FormatError("bad magic")
    version, dtype, ndim = struct.unpack_from("<HBB", buf, 4)
    if version != VERSION or dtype != DTYPE_F64:
        raise FormatError(f"unsupported version/dtype {version}/{dtype}")
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    off = 8 + 4 * ndim
    n = int(np.prod(dims)) if ndim else 1
    if len(buf) != off + 8 * n:
        raise FormatError(f"payload length {len(buf) - off} != {8 * n}")
    return np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(dims).astype(np.float64)


def write_tensor(path, arr):
    path = Path(path)
    try:
        path.write_bytes(tensor_to_bytes(arr))
    except OSError as exc:
        raise OSError(f"writing {path}: {exc}") from exc


def read_tensor(path):
    path = Path(path)
    try:
        return tensor_from_bytes(path.read_bytes())
    except OSError as exc:
        raise OSError(f"reading {path}: {exc}") from exc


def clip_metadata(clip):
    return {
        "seed": clip.seed,
        "scene_id": clip.scene_id,
        "track_id": clip.track_id,
        "caption": clip.caption,
        "num_frames": clip.num_frames,
        "visibility_threshold": clip.visibility_threshold,
        "poses": clip.poses.flatten().tolist(),
        "windows": clip.windows.tolist(),
        "subjects": [
            {
                "subject_id": int(sid),
                "boxes": clip.boxes[sid].tolist(),
                "visible": [bool(v) for v in clip.visible[sid]],
            }
            for sid in clip.boxes
        ],
        "events": [[int(s), int(a), int(b)] for s, a, b in clip.events],
        **clip.meta,
    }


def write_clip(directory, name, clip):
    """Write ``<name>.hwmt`` and ``<name>.json`` into ``directory``."""
    directory = Path(directory)
    write_tensor(directory / f"{name}.hwmt", clip.frames)
    text = json.dumps(clip_metadata(clip), sort_keys=True, separators=(",", ":"))
    try:
        (directory / f"{name}.json").write_text(text + "\n")
    except OSError as exc:
        raise OSError(f"writing {directory / name}.json: {exc}") from exc


def read_clip(directory, name):
    directory = Path(directory)
    frames = read_tensor(directory / f"{name}.hwmt")
    meta = json.loads((directory / f"{name}.json").read_text())
    known = {"seed", "scene_id", "track_id", "caption", "num_frames", "visibility_threshold",
             "poses", "windows", "subjects", "events"}
    return RenderedClip(
        frames=frames,
        poses=CameraPoseSeq.unflatten(meta["poses"]),
        windows=np.asarray(meta["windows"], dtype=np.int64),
        boxes={s["subject_id"]: np.asarray(s["boxes"], dtype=np.int64) for s in meta["subjects"]},
        visible={s["subject_id"]: np.asarray(s["visible"], dtype=bool) for s in meta["subjects"]},
        events=[tuple(e) for e in meta["events"]],
        caption=meta["caption"],
        seed=meta["seed"],
        scene_id=meta["scene_id"],
        track_id=meta["track_id"],
        visibility_threshold=meta["visibility_threshold"],
        meta={k: v for k, v in meta.items() if k not in known},
    )
