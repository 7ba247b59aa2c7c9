import json
import struct
import zlib

import numpy as np
import pytest

from hydra_wm import checkpoint as ckpt_io
from hydra_wm.cli import EXIT_OK, EXIT_USAGE, main
from hydra_wm.datasets import read_dataset
from hydra_wm.errors import ConfigError
from hydra_wm.experiments import build
from hydra_wm.imageio import png_bytes
from hydra_wm.runconfig import RunConfig, load_config, save_config
from hydra_wm.world import detect_exit_entry
from hydra_wm.world.storage import read_tensor


def tiny_config(**train):
    cfg = RunConfig()
    cfg = cfg.update("model", width=16, heads=2, depth=1)
    cfg = cfg.update("data", num_train=3, num_test=2)
    cfg = cfg.update("train", steps=4, batch_size=1, log_interval=2, checkpoint_interval=2, **train)
    return cfg.update("eval", sample_steps=2)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_config(tiny_config(), root / "tiny.json")
    assert main(["datagen", "--config", str(root / "tiny.json"), "--out", str(root / "data")]) == EXIT_OK
    assert main(["train", "--config", str(root / "tiny.json"), "--data", str(root / "data" / "train"),
                 "--out", str(root / "run")]) == EXIT_OK
    return root


# config

def test_config_roundtrip(tmp_path):
    cfg = tiny_config()
    save_config(cfg, tmp_path / "c.json")
    again = load_config(tmp_path / "c.json")
    assert again == cfg and again.hash() == cfg.hash()


def test_config_unknown_keys_rejected():
    d = RunConfig().to_dict()
    d["model"]["widht"] = 3
    with pytest.raises(ConfigError, match="widht"):
        RunConfig.from_dict(d)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"extras": {}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"version": 99})


def test_config_hash_sensitivity():
    a = RunConfig()
    assert a.hash() == RunConfig().hash()
    assert a.update("train", lr=1e-3).hash() != a.hash()
    assert a.update("paths", data="/x").hash() == a.hash()
    assert a.update("train", lr=1e-3).world_hash() == a.world_hash()


def test_bad_config_exit_code(tmp_path, capsys):
    (tmp_path / "bad.json").write_text('{"train": {"nope": 1}}')
    assert main(["datagen", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "nope" in capsys.readouterr().err


# checkpoint

def test_checkpoint_bytes_roundtrip(tmp_path):
    cfg = tiny_config()
    model, optim = build(cfg)
    for p in model.parameters():
        p.grad = np.ones_like(p.data)
    optim.step()
    path = ckpt_io.save(tmp_path / "a.hwck", model, optim, cfg)
    ck = ckpt_io.load(path)
    m2, o2 = build(cfg)
    ckpt_io.restore(ck, m2, o2)
    ckpt_io.save(tmp_path / "b.hwck", m2, o2, cfg)
    assert (tmp_path / "a.hwck").read_bytes() == (tmp_path / "b.hwck").read_bytes()
    assert ck.header["step"] == 1 and ck.header["config_hash"] == cfg.hash()


def test_checkpoint_corruption(tmp_path):
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.from_bytes(b"NOPE" + bytes(10))
    cfg = tiny_config()
    model, optim = build(cfg)
    data = ckpt_io.to_bytes(ckpt_io.capture(model, optim, cfg))
    with pytest.raises(ckpt_io.CheckpointError):
        ckpt_io.from_bytes(data[:-8])


# datagen

def test_datagen_manifest(workdir):
    for split, n in (("train", 3), ("test", 2)):
        manifest, clips = read_dataset(workdir / "data" / split)
        assert len(manifest["clips"]) == len(clips) == n
        assert len(list((workdir / "data" / split).glob("clip_*.json"))) == n
        assert manifest["config_hash"] == tiny_config().hash()
        for entry, clip in zip(manifest["clips"], clips):
            assert entry["event_count"] >= 1
            assert detect_exit_entry(clip.visible) == clip.events


def test_datagen_deterministic(workdir, tmp_path):
    assert main(["datagen", "--config", str(workdir / "tiny.json"), "--out", str(tmp_path / "d")]) == EXIT_OK
    for f in sorted((workdir / "data").rglob("*")):
        if f.is_file():
            assert (tmp_path / "d" / f.relative_to(workdir / "data")).read_bytes() == f.read_bytes()


# train

def test_train_artifacts(workdir):
    run = workdir / "run"
    lines = (run / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 4 // 2
    recs = [json.loads(ln) for ln in lines]
    assert [r["step"] for r in recs] == [2, 4]
    assert all({"step", "loss", "lr", "wall", "config_hash"} <= set(r) for r in recs)
    assert (run / "ckpt_000002.hwck").exists() and (run / "final.hwck").exists()
    assert ckpt_io.load(run / "final.hwck").header["step"] == 4


def test_train_resume_matches(workdir, tmp_path):
    out = tmp_path / "resumed"
    assert main(["train", "--resume", str(workdir / "run" / "ckpt_000002.hwck"),
                 "--data", str(workdir / "data" / "train"), "--out", str(out)]) == EXIT_OK
    assert (out / "final.hwck").read_bytes() == (workdir / "run" / "final.hwck").read_bytes()


# sample

def test_sample_outputs(workdir, tmp_path):
    clip = next((workdir / "data" / "test").glob("clip_*.json")).with_suffix("")
    args = ["sample", "--checkpoint", str(workdir / "run" / "final.hwck"), "--clip", str(clip),
            "--n-ctx", "16", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    pred = read_tensor(tmp_path / "a" / "pred.hwmt")
    assert pred.shape == (3, 24, 16, 16)
    assert pred.min() >= 0.0 and pred.max() <= 1.0
    assert np.array_equal(pred, read_tensor(tmp_path / "b" / "pred.hwmt"))
    assert len(list((tmp_path / "a").glob("frame_*.png"))) == 24


# eval

def test_eval_report(workdir, tmp_path, capsys):
    out = tmp_path / "report.tsv"
    assert main(["eval", "--checkpoint", str(workdir / "run" / "final.hwck"),
                 "--data", str(workdir / "data" / "test"), "--out", str(out)]) == EXIT_OK
    text = out.read_text()
    assert f"# config_hash: {tiny_config().hash()}" in text
    rows = [ln for ln in text.splitlines() if ln.startswith("clip_")]
    assert len(rows) == 2 * 4


def test_eval_refuses_world_mismatch(workdir, tmp_path):
    other = tiny_config().update("world", pan_amplitude=20)
    save_config(other, tmp_path / "o.json")
    assert main(["datagen", "--config", str(tmp_path / "o.json"), "--out", str(tmp_path / "d")]) == EXIT_OK
    base = ["eval", "--checkpoint", str(workdir / "run" / "final.hwck"), "--data", str(tmp_path / "d" / "test")]
    assert main(base) == EXIT_USAGE
    assert main(base + ["--allow-hash-mismatch"]) == EXIT_OK


# ablate

def test_ablate_tokens_rows(workdir, tmp_path):
    cfg = tiny_config().update("model", top_k=1).update("data", num_test=1)
    save_config(cfg, tmp_path / "c.json")
    code = main(["ablate", "--suite", "tokens", "--config", str(tmp_path / "c.json"),
                 "--steps", "1", "--out", str(tmp_path / "ab")])
    assert code == EXIT_OK
    lines = (tmp_path / "ab" / "tokens.tsv").read_text().splitlines()
    assert "# identical_seeds: True" in lines[2]
    body = lines[4:]
    assert [ln.split("\t")[0] for ln in body] == ["K=5", "K=10", "K=15"]


# image writer

def test_png_structure():
    img = np.random.default_rng(0).uniform(size=(3, 5, 7))
    data = png_bytes(img)
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    pos, chunks = 8, {}
    while pos < len(data):
        (n,) = struct.unpack(">I", data[pos:pos + 4])
        kind, body = data[pos + 4:pos + 8], data[pos + 8:pos + 8 + n]
        (crc,) = struct.unpack(">I", data[pos + 8 + n:pos + 12 + n])
        assert crc == zlib.crc32(kind + body)
        chunks[kind] = body
        pos += 12 + n
    w, h = struct.unpack(">II", chunks[b"IHDR"][:8])
    assert (w, h) == (7, 5)
    raw = zlib.decompress(chunks[b"IDAT"])
    rows = np.frombuffer(raw, np.uint8).reshape(5, 1 + 7 * 3)
    assert (rows[:, 0] == 0).all()
    expect = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0).reshape(5, -1)
    assert np.array_equal(rows[:, 1:], expect)
