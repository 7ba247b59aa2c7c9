"""Binary checkpoint: JSON header followed by named float64 blocks.

Layout (little-endian):

    magic        4 bytes  b"HWCK"
    version      u16      1
    header_len   u32
    header       UTF-8 JSON (sorted keys): config, config_hash, world_hash,
                 step, optimizer hyper-parameters, block names in order
    blocks       repeated: u16 name_len, name, u8 ndim, ndim x u32 dims,
                 prod(dims) x f64

Blocks hold model parameters ("param/<name>") then Adam moments
("adam.m/<name>", "adam.v/<name>"). Nothing time-dependent is stored, so
save -> load -> save reproduces the bytes exactly.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"HWCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    header: dict
    blocks: dict  # name -> ndarray, in file order

    @property
    def params(self):
        return {k[6:]: v for k, v in self.blocks.items() if k.startswith("param/")}

    def optimizer(self, which):
        pre = f"adam.{which}/"
        return {k[len(pre):]: v for k, v in self.blocks.items() if k.startswith(pre)}


def _block(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode()
    return (struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
            + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())


def to_bytes(ckpt):
    header = dict(ckpt.header)
    header["blocks"] = list(ckpt.blocks)
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = [MAGIC, struct.pack("<HI", VERSION, len(text)), text]
    out.extend(_block(name, arr) for name, arr in ckpt.blocks.items())
    return b"".join(out)


def from_bytes(buf):
    if buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported")
    off = 10
    header = json.loads(buf[off:off + hlen].decode())
    off += hlen
    blocks = {}
    while off < len(buf):
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + n].decode()
        off += n
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        count = int(np.prod(dims)) if ndim else 1
        if off + 8 * count > len(buf):
            raise CheckpointError(f"truncated block {name!r}")
        blocks[name] = np.frombuffer(buf, "<f8", count, off).reshape(dims).astype(np.float64)
        off += 8 * count
    names = header.pop("blocks", None)
    if names is not None and names != list(blocks):
        raise CheckpointError("block listing does not match contents")
    return Checkpoint(header, blocks)


def capture(model, optim, config):
    """Checkpoint of a model (and optional Adam optimizer) under ``config``."""
    blocks = {f"param/{k}": p.data for k, p in model.named_parameters()}
    header = {
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "world_hash": config.world_hash(),
        "step": 0,
    }
    if optim is not None:
        s = optim.state
        header.update(step=s.step, optimizer={"lr": s.lr, "warmup": s.warmup, "betas": list(s.betas),
                                              "eps": s.eps, "grad_clip": optim.grad_clip})
        for k in s.m:
            blocks[f"adam.m/{k}"] = s.m[k]
        for k in s.v:
            blocks[f"adam.v/{k}"] = s.v[k]
    return Checkpoint(header, blocks)


def save(path, model, optim, config):
    path = Path(path)
    data = to_bytes(capture(model, optim, config))
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_bytes(data)
        tmp.replace(path)
    except OSError as exc:
        raise OSError(f"writing checkpoint {path}: {exc}") from exc
    return path


def load(path):
    path = Path(path)
    try:
        return from_bytes(path.read_bytes())
    except OSError as exc:
        raise OSError(f"reading checkpoint {path}: {exc}") from exc


def restore(ckpt, model, optim=None):
    """Load parameters (and optimizer state) into existing objects."""
    try:
        model.load_state_dict(ckpt.params)
    except KeyError as exc:
        raise ConfigError(f"checkpoint does not fit the model: {exc}") from exc
    if optim is not None:
        m, v = ckpt.optimizer("m"), ckpt.optimizer("v")
        if set(m) != set(optim.state.m):
            raise ConfigError("checkpoint has no matching optimizer state")
        optim.state.m = {k: m[k].copy() for k in optim.state.m}
        optim.state.v = {k: v[k].copy() for k in optim.state.v}
        optim.state.step = int(ckpt.header["step"])
