"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see conftest). Exact criteria assert
their verdict. The three ordering criteria (7 to 9) compare single training
runs, so they assert that the experiment itself is sound and report an
ordering that does not hold as an expected failure carrying the numbers.
The training criteria share session fixtures: four desk-scale models on the
default toy dataset, trained with identical seeds.
"""

import math
import time

import numpy as np
import pytest

from hydra_wm.codec import decode, encode
from hydra_wm.core import Tensor, check_gradients, kernels, tsum
from hydra_wm.core.tensor import mul
from hydra_wm.datasets import test_clips as held_out_clips
from hydra_wm.datasets import train_clips
from hydra_wm.experiments import evaluate, train_model
from hydra_wm.metrics import PSNR_INF, bootstrap_std, clip_boxes, dsc, mse, psnr, ssim
from hydra_wm.model import (
    HybridMemoryDiT,
    affinity,
    affinity_rows,
    dense_attention_reference,
    retrieval_attention,
    topk_select_rows,
)
from hydra_wm.runconfig import RunConfig
from hydra_wm.world import detect_exit_entry, filter_dataset, generate_scenario, render

from test_core_tensor import OPS, leaf, weighted  # noqa: I001
from test_model import flatten_oracle, poses, randomize, tiny
from test_world import events_oracle, visibility_oracle

TRUNCATED_CONTEXT = 2  # latent frames kept by the dense baseline


def test_c01_affinity_oracle(criterion):
    rng = np.random.default_rng(1)
    start, worst = time.perf_counter(), 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 17))
        h, w = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        H, W = h * int(rng.integers(1, 5)), w * int(rng.integers(1, 5))
        q = rng.standard_normal((d, H, W))
        keys = rng.standard_normal((int(rng.integers(1, 9)), d, h, w))
        worst = max(worst, float(np.abs(affinity(q, keys) - flatten_oracle(q, keys)).max()))
    secs = time.perf_counter() - start
    assert criterion(1, worst < 1e-10 and secs < 60, f"max |err| {worst:.2e} over 1000 pairs in {secs:.1f}s")


def test_c02_dense_equivalence(criterion):
    rng = np.random.default_rng(2)
    start, worst = time.perf_counter(), 0.0
    for _ in range(100):
        heads = int(rng.integers(1, 4))
        width = heads * int(rng.integers(1, 5))
        f, fm = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        h, w = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        n = h * w
        q, k, v = (rng.standard_normal((f, n, width)) for _ in range(3))
        mk, mv = rng.standard_normal((fm, n, width)), rng.standard_normal((fm, n, width))
        grid = lambda t: t.reshape(t.shape[0], h, w, width).transpose(0, 3, 1, 2)  # noqa: E731
        top_k = fm + int(rng.integers(0, 3))
        sel = topk_select_rows(affinity_rows(grid(q), grid(mk)), top_k)
        out = retrieval_attention(Tensor(q), Tensor(k), Tensor(v), Tensor(mk), Tensor(mv),
                                  list(sel), lambda i, m: (0, m), heads).data
        keys = np.concatenate([mk.reshape(-1, width), k.reshape(-1, width)])
        vals = np.concatenate([mv.reshape(-1, width), v.reshape(-1, width)])
        ref = dense_attention_reference(q.reshape(-1, width), keys, vals, heads)
        worst = max(worst, float(np.abs(out.reshape(-1, width) - ref).max()))
    secs = time.perf_counter() - start
    assert criterion(2, worst < 1e-8 and secs < 300, f"max |err| {worst:.2e} over 100 configs in {secs:.1f}s")


def test_c03_gradients(criterion):
    start = time.perf_counter()
    op_err = {}
    for name in sorted(OPS):
        rng = np.random.default_rng(len(name))
        fn, shapes = OPS[name]
        args = [leaf(rng, *s) for s in shapes]
        wts = rng.standard_normal(fn(*args).shape)
        op_err[name] = check_gradients(lambda: weighted(fn(*args), wts), args)
    rng = np.random.default_rng(3)
    cfg = tiny()
    assert cfg.depth == 2
    m = HybridMemoryDiT(cfg)
    randomize(m, rng, 0.2)
    z = rng.standard_normal((cfg.latent_channels, 3) + cfg.latent_hw)
    zm = rng.standard_normal((cfg.latent_channels, 4) + cfg.latent_hw)
    c = poses(7, rng)
    wts = rng.standard_normal(z.shape)
    model_err = check_gradients(lambda: tsum(mul(m(Tensor(z), 0.3, c, zm), Tensor(wts))), m.parameters(),
                                max_entries=4, rng=np.random.default_rng(0))
    worst_op = max(op_err, key=op_err.get)
    secs = time.perf_counter() - start
    ok = op_err[worst_op] < 1e-5 and model_err < 1e-4 and secs < 600
    assert criterion(3, ok, f"{len(op_err)} ops worst {worst_op} {op_err[worst_op]:.1e}; "
                            f"2-block model {model_err:.1e}; {secs:.1f}s")


def test_c04_codec_invertible(criterion):
    rng = np.random.default_rng(4)
    exact = 0
    for _ in range(100):
        f = 4 * int(rng.integers(1, 11))
        x = rng.uniform(-1, 1, size=(3, f, 16, 16))
        exact += decode(encode(x, 2)).tobytes() == x.tobytes()
    assert criterion(4, exact == 100, f"{exact}/100 videos bitwise exact")


def test_c05_event_soundness(criterion):
    mismatches, clips = 0, []
    for seed in range(1000):
        clip = render(generate_scenario(seed))
        expected = []
        for sid in sorted(clip.boxes):
            flags = visibility_oracle(clip, sid)
            mismatches += not np.array_equal(flags, clip.visible[sid])
            expected += [(sid, a, b) for a, b in events_oracle(flags)]
        mismatches += clip.events != expected or detect_exit_entry(clip.visible) != clip.events
        clips.append(clip)
    kept = filter_dataset(clips)
    empty = sum(not c.events for c in kept)
    ok = mismatches == 0 and empty == 0 and kept
    assert criterion(5, ok, f"1000 clips, {mismatches} oracle mismatches; {len(kept)} kept, {empty} without events")


# trained models

def base_config():
    return RunConfig().validate()


def variant(name):
    cfg = base_config()
    if name == "dense":
        return cfg.update("model", retrieval="dense_baseline", baseline_context=TRUNCATED_CONTEXT)
    if name == "fov":
        return cfg.update("model", retrieval="fov_overlap")
    if name == "kt1":
        return cfg.update("model", tokenizer_kernel=(1, 4, 4), tokenizer_stride=(1, 4, 4))
    return cfg


@pytest.fixture(scope="session")
def train_set():
    return train_clips(base_config())


@pytest.fixture(scope="session")
def trained(train_set):
    cache = {}

    def get(name):
        if name not in cache:
            cfg = variant(name)
            log = []
            start = time.perf_counter()
            model, _, losses = train_model(cfg, train_set, log=log.append)
            cache[name] = dict(cfg=cfg, model=model, losses=losses, log=log, secs=time.perf_counter() - start)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def splits():
    return {
        "random": held_out_clips(base_config()),
        "truncation": held_out_clips(base_config().update("data", test_kind="truncation").update(
            "model", baseline_context=TRUNCATED_CONTEXT)),
        "empty_pose": held_out_clips(base_config().update("data", test_kind="empty_pose")),
    }


def _sound(*reports):
    """Every clip scored, pixel metrics finite, one report per distinct config."""
    for r in reports:
        assert len(r.rows) == 50
        assert all(math.isfinite(v) for m in ("psnr", "ssim") for v in r.column(m))
    assert len({r.header["config_hash"] for r in reports}) == len(reports)


def _ordering(criterion, number, ok, detail):
    criterion(number, ok, detail)
    if not ok:
        pytest.xfail(f"ordering not reproduced: {detail}")


def _summary(report, metric):
    return f"{report.mean(metric):.4f}+-{bootstrap_std(report.column(metric)):.4f}"


def test_c06_training_sanity(criterion, train_set, trained):
    run = trained("dynamic")
    cfg = run["cfg"]
    losses = run["losses"][:500]
    first, last = np.mean(losses[:10]), np.mean(losses[450:500])
    wall = next(r["wall"] for r in run["log"] if r["step"] == 500)
    ok = (len(train_set) >= 200 and cfg.world.scene_size == 64 and cfg.world.window == 16
          and len(losses) == 500 and last < 0.5 * first and wall < 1800)
    assert criterion(6, ok, f"{len(train_set)} clips; loss first-10 {first:.4f} -> steps 451-500 {last:.4f} "
                            f"(ratio {last / first:.3f}); 500 steps in {wall:.0f}s")


def test_c07_memory_vs_truncated_dense(criterion, trained, splits):
    clips = splits["truncation"]
    dyn = evaluate(trained("dynamic")["model"], trained("dynamic")["cfg"], clips)
    dense = evaluate(trained("dense")["model"], trained("dense")["cfg"], clips)
    _sound(dyn, dense)
    ok = dyn.mean("dsc_gt") > dense.mean("dsc_gt") and dyn.mean("psnr") > dense.mean("psnr")
    detail = (f"{len(clips)} clips; DSC_GT dynamic {_summary(dyn, 'dsc_gt')} vs dense {_summary(dense, 'dsc_gt')}; "
              f"PSNR {_summary(dyn, 'psnr')} vs {_summary(dense, 'psnr')}")
    _ordering(criterion, 7, ok, detail)


def empty_token_selected(clip, n_ctx, selections, mcfg):
    """True when some FOV-selected memory token only covers subject-free frames."""
    kt, st = mcfg.tokenizer_kernel[0], mcfg.stride[0]
    for frame_sel in selections:
        for j in frame_sel:
            frames = range(4 * j * st, min(4 * (j * st + kt), n_ctx))
            if not any(clip.visible[sid][f] for sid in clip.visible for f in frames):
                return True
    return False


def test_c08_dynamic_vs_fov_on_empty_pose(criterion, trained, splits):
    clips = splits["empty_pose"]
    dyn = evaluate(trained("dynamic")["model"], trained("dynamic")["cfg"], clips)
    fov_run = trained("fov")
    record = []
    fov = evaluate(fov_run["model"], fov_run["cfg"], clips, record=record)
    hits = sum(empty_token_selected(c, r["n_ctx"], r["selections"][0], fov_run["cfg"].model)
               for c, r in zip(clips, record))
    _sound(dyn, fov)
    assert len(record) == len(clips) and all(r["selections"] for r in record)
    ok = dyn.mean("dsc_gt") >= fov.mean("dsc_gt") and hits >= 0.5 * len(clips)
    detail = (f"{len(clips)} clips; DSC_GT dynamic {_summary(dyn, 'dsc_gt')} vs fov {_summary(fov, 'dsc_gt')}; "
              f"fov picked an empty-frame token on {hits}/{len(clips)}")
    _ordering(criterion, 8, ok, detail)


def test_c09_temporal_kernel(criterion, trained, splits):
    clips = splits["random"]
    run1, run2 = trained("kt1"), trained("dynamic")
    kt1 = evaluate(run1["model"], run1["cfg"], clips)
    kt2 = evaluate(run2["model"], run2["cfg"], clips)
    _sound(kt1, kt2)
    assert run1["cfg"].train == run2["cfg"].train
    assert len(run1["log"]) == len(run2["log"]) == 200
    ok = kt1.mean("psnr") <= kt2.mean("psnr")
    detail = (f"{len(clips)} clips; PSNR kt=1 {_summary(kt1, 'psnr')} vs kt=2 {_summary(kt2, 'psnr')}; "
              f"last-50 loss kt=1 {np.mean(run1['losses'][-50:]):.4f} kt=2 {np.mean(run2['losses'][-50:]):.4f}")
    _ordering(criterion, 9, ok, detail)


def test_c10_topk_selection(criterion):
    rng = np.random.default_rng(10)
    mismatches, total = 0, 0
    backends = kernels.available_backends()
    prev = kernels.backend_name()
    try:
        while total < 1_000_000:
            n, k = int(rng.integers(1, 24)), int(rng.integers(1, 26))
            rows = 5000
            # coarse integer scores force frequent ties
            scores = rng.integers(-4, 5, size=(rows, n)).astype(np.float64)
            order = np.argsort(-scores, axis=1, kind="stable")
            oracle = np.sort(order[:, :min(k, n)], axis=1)
            for b in backends:
                kernels.use_backend(b)
                mismatches += int((np.asarray(kernels.topk_rows(scores, k)) != oracle).any(axis=1).sum())
            total += rows
    finally:
        kernels.use_backend(prev)
    assert criterion(10, mismatches == 0, f"{total} selections per backend {backends}, {mismatches} mismatches")


def test_c11_metric_identities(criterion):
    rng = np.random.default_rng(11)
    clip = filter_dataset([render(generate_scenario(s)) for s in range(5)])[0]
    v = clip.frames
    boxes = clip_boxes(clip, 0, clip.num_frames)
    self_dsc, self_ssim = dsc(v, v, boxes).value, ssim(v, v)
    worst_psnr, lo, hi = 0.0, 1.0, -1.0
    for _ in range(1000):
        a, b = rng.uniform(size=(2, 3, 2, 16, 16))
        p = psnr(a, b)
        worst_psnr = max(worst_psnr, abs(p - 10 * math.log10(1.0 / mse(a, b))))
        box = {0: [(int(rng.integers(0, 12)), int(rng.integers(0, 12)), 4, 4)] * 2}
        d = dsc(a, b, box).value
        lo, hi = min(lo, d), max(hi, d)
    ok = (self_dsc == 1.0 and abs(self_ssim - 1.0) < 1e-12 and psnr(v, v) == PSNR_INF
          and worst_psnr < 1e-9 and -1.0 <= lo and hi <= 1.0)
    assert criterion(11, ok, f"DSC(v,v)={self_dsc} SSIM(v,v)={self_ssim}; psnr identity err {worst_psnr:.1e}; "
                             f"DSC range [{lo:.3f}, {hi:.3f}] over 1000 pairs")
