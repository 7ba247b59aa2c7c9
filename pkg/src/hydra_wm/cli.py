"""hydra-wm command line: datagen, train, sample, eval, ablate."""

import os

# thread count must be fixed before numpy loads its BLAS
_threads = os.environ.get("HYDRA_WM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from dataclasses import replace  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import checkpoint as ckpt_io  # noqa: E402
from .datasets import read_dataset, test_clips, train_clips, write_dataset  # noqa: E402
from .errors import ConfigError, UsageError  # noqa: E402
from .experiments import SUITES, build, evaluate, format_suite, run_suite, train_model  # noqa: E402
from .imageio import upscale, write_png  # noqa: E402
from .predict import predict_video  # noqa: E402
from .runconfig import RunConfig, load_config, save_config  # noqa: E402
from .world.clip import default_split  # noqa: E402
from .world.storage import read_clip, write_tensor  # noqa: E402

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class HashMismatch(ConfigError):
    pass


def _mkdir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"creating {path}: {exc}") from exc
    return path


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.update("train", seed=args.seed).update("data", seed=args.seed)
    return cfg


def _dataset_header(cfg, split):
    return {"config_hash": cfg.hash(), "world_hash": cfg.world_hash(), "split": split,
            "data": cfg.to_dict()["data"], "world": cfg.to_dict()["world"]}


def _check_world(expected, found, what, allow):
    if expected != found and not allow:
        raise HashMismatch(f"{what} world hash {found} != checkpoint {expected} "
                           "(pass --allow-hash-mismatch to override)")


def cmd_datagen(args):
    cfg = _config(args)
    out = _mkdir(args.out)
    save_config(cfg, out / "config.json")
    counts = {}
    for split, clips in (("train", train_clips(cfg)), ("test", test_clips(cfg))):
        write_dataset(out / split, clips, _dataset_header(cfg, split))
        counts[split] = len(clips)
    print(json.dumps({"out": str(out), "config_hash": cfg.hash(), **counts}, sort_keys=True))
    return EXIT_OK


def _load_train_clips(cfg, args):
    data = args.data or cfg.paths.data
    if data is None:
        return train_clips(cfg)
    manifest, clips = read_dataset(data)
    _check_world(cfg.world_hash(), manifest.get("world_hash"), f"dataset {data}", args.allow_hash_mismatch)
    if not clips:
        raise UsageError(f"dataset {data} is empty")
    return clips


def cmd_train(args):
    out = _mkdir(args.out)
    if args.resume:
        ck = ckpt_io.load(args.resume)
        cfg = RunConfig.from_dict(ck.header["config"])
        if args.steps is not None:
            cfg = cfg.update("train", steps=args.steps)
        model, optim = build(cfg)
        ckpt_io.restore(ck, model, optim)
    else:
        cfg = _config(args)
        if args.steps is not None:
            cfg = cfg.update("train", steps=args.steps)
        model, optim = build(cfg)
    clips = _load_train_clips(cfg, args)
    save_config(cfg, out / "config.json")

    log_path = out / "train_log.jsonl"
    start = optim.state.step
    kept = []
    if start and log_path.exists():
        kept = [ln for ln in log_path.read_text().splitlines() if ln and json.loads(ln)["step"] <= start]
    log_path.write_text("".join(ln + "\n" for ln in kept))
    h = cfg.hash()

    def log(rec):
        rec = {"config_hash": h, **rec}
        with open(log_path, "a") as f:
            f.write(json.dumps(rec, sort_keys=True) + "\n")

    def checkpoint(step):
        ckpt_io.save(out / f"ckpt_{step:06d}.hwck", model, optim, cfg)

    _, _, losses = train_model(cfg, clips, log=log, checkpoint=checkpoint, model=model, optim=optim)
    final = ckpt_io.save(out / "final.hwck", model, optim, cfg)
    summary = {"final_checkpoint": str(final), "steps": optim.state.step, "config_hash": h,
               "last_loss": losses[-1] if losses else None}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _model_from_checkpoint(path):
    ck = ckpt_io.load(path)
    cfg = RunConfig.from_dict(ck.header["config"])
    model, _ = build(cfg)
    ckpt_io.restore(ck, model)
    return model, cfg, ck


def cmd_sample(args):
    model, cfg, _ = _model_from_checkpoint(args.checkpoint)
    clip_path = Path(args.clip)
    clip = read_clip(clip_path.parent, clip_path.name)
    if clip.frames.shape[2:] != (cfg.world.window, cfg.world.window):
        raise ConfigError(f"clip frames {clip.frames.shape[2:]} do not fit the checkpoint's "
                          f"{cfg.world.window}x{cfg.world.window} windows")
    n_ctx = args.n_ctx if args.n_ctx is not None else default_split(clip)
    steps = args.steps or cfg.eval.sample_steps
    seed = cfg.eval.seed if args.seed is None else args.seed
    pred = predict_video(model, clip, n_ctx, steps, seed)
    out = _mkdir(args.out)
    write_tensor(out / "pred.hwmt", pred)
    gt = clip.frames[:, n_ctx:]
    for f in range(pred.shape[1]):
        side = np.concatenate([gt[:, f], np.ones((3, gt.shape[2], 1)), pred[:, f]], axis=2)
        write_png(out / f"frame_{n_ctx + f:03d}.png", upscale(side, 4))
    meta = {"config_hash": cfg.hash(), "clip": str(clip_path), "n_ctx": n_ctx, "steps": steps,
            "seed": seed, "frames": int(pred.shape[1])}
    (out / "sample.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    model, cfg, _ = _model_from_checkpoint(args.checkpoint)
    data = args.data or cfg.paths.test_data
    if data is None:
        clips = test_clips(cfg)
    else:
        manifest, clips = read_dataset(data)
        _check_world(cfg.world_hash(), manifest.get("world_hash"), f"dataset {data}", args.allow_hash_mismatch)
    e = cfg.eval
    if args.steps:
        e = replace(e, sample_steps=args.steps)
    if args.seed is not None:
        e = replace(e, seed=args.seed)
    cfg = replace(cfg, eval=e)
    report = evaluate(model, cfg, clips)
    report.header["checkpoint"] = str(args.checkpoint)
    text = report.to_text()
    if args.out:
        out = Path(args.out)
        if out.parent != Path(""):
            _mkdir(out.parent)
        out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args):
    base = _config(args)
    if args.suite == "retrieval" and base.data.test_kind == "random":
        base = base.update("data", test_kind="empty_pose")
    out = _mkdir(args.out)
    save_config(base, out / "base_config.json")
    train, test = train_clips(base), test_clips(base)
    log_path = out / "cells.jsonl"
    log_path.write_text("")

    def log(row):
        with open(log_path, "a") as f:
            f.write(json.dumps(row, sort_keys=True) + "\n")

    rows = run_suite(args.suite, base, train, test, steps=args.steps, log=log)
    text = format_suite(args.suite, rows, base)
    (out / f"{args.suite}.tsv").write_text(text)
    sys.stdout.write(text)
    return EXIT_FAIL if any(r.get("error") for r in rows) else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="hydra-wm", description="Hybrid-memory video world model toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="run config JSON (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override data/train (or sampling) seed")
        sp.add_argument("--out", required=out_required, help="output directory or file")

    sp = sub.add_parser("datagen", help="generate event-bearing train/test clips")
    common(sp)
    sp.set_defaults(func=cmd_datagen)

    sp = sub.add_parser("train", help="flow-matching training")
    common(sp)
    sp.add_argument("--data", help="training dataset directory (manifest.json)")
    sp.add_argument("--steps", type=int, help="total optimizer steps")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--allow-hash-mismatch", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="predict target frames for one clip")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--clip", required=True, help="clip path without extension")
    sp.add_argument("--n-ctx", type=int, help="context length in frames")
    sp.add_argument("--steps", type=int, help="Euler steps")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="metrics report over a test dataset")
    common(sp, out_required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", help="test dataset directory")
    sp.add_argument("--steps", type=int, help="Euler steps")
    sp.add_argument("--allow-hash-mismatch", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="run an ablation grid")
    common(sp)
    sp.add_argument("--suite", required=True, choices=sorted(SUITES))
    sp.add_argument("--steps", type=int, help="training steps per cell")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
