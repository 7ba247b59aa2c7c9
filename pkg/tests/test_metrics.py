import math

import numpy as np
import pytest

from hydra_wm.errors import DimensionError
from hydra_wm.metrics import (
    METRICS,
    PSNR_INF,
    PatchExtractor,
    RandomProjectionExtractor,
    clip_boxes,
    crop,
    dsc,
    evaluate_predictions,
    gaussian_taps,
    mse,
    nearest_resample,
    psnr,
    ssim,
)
from hydra_wm.world import filter_dataset, generate_scenario, render


@pytest.fixture(scope="module")
def clips():
    return filter_dataset([render(generate_scenario(s)) for s in range(10)])[:4]


def test_psnr_identical():
    x = np.random.default_rng(0).uniform(size=(3, 2, 16, 16))
    assert psnr(x, x) == PSNR_INF


def test_psnr_closed_form():
    assert psnr(np.zeros((3, 4, 4)), np.full((3, 4, 4), 0.5)) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_symmetric_and_consistent(rng):
    a, b = rng.uniform(size=(2, 3, 16, 16))
    assert psnr(a, b) == psnr(b, a)
    assert abs(psnr(a, b) - 10 * math.log10(1 / mse(a, b))) < 1e-9


def test_psnr_shape_mismatch():
    with pytest.raises(DimensionError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_ssim_self(rng):
    a = rng.uniform(size=(3, 2, 16, 16))
    assert abs(ssim(a, a) - 1.0) < 1e-9


def test_ssim_constants_closed_form():
    a, b = np.full((3, 1, 16, 16), 0.2), np.full((3, 1, 16, 16), 0.7)
    c1 = 0.01 ** 2
    expected = (2 * 0.2 * 0.7 + c1) / (0.2 ** 2 + 0.7 ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-9)


def test_ssim_noise_lowers(rng):
    a = rng.uniform(size=(3, 2, 16, 16))
    n = rng.standard_normal(a.shape)
    s1, s2 = ssim(a, np.clip(a + 0.05 * n, 0, 1)), ssim(a, np.clip(a + 0.2 * n, 0, 1))
    assert 1.0 > s1 > s2


def test_ssim_shape_errors():
    with pytest.raises(DimensionError):
        ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))
    with pytest.raises(DimensionError):
        ssim(np.zeros((1, 16, 16)), np.zeros((1, 16, 17)))


def test_gaussian_taps():
    g = gaussian_taps()
    assert len(g) == 11 and g.sum() == pytest.approx(1.0) and np.argmax(g) == 5


# DSC

def _full_box_video(pattern):
    return np.broadcast_to(pattern, (3, 1, 16, 16)).copy()


def test_dsc_self_is_one(clips):
    clip = clips[0]
    boxes = clip_boxes(clip, 0, clip.num_frames)
    r = dsc(clip.frames, clip.frames, boxes)
    assert r.value == 1.0


def test_dsc_orthogonal_patterns_zero():
    yy, xx = np.mgrid[0:16, 0:16]
    a = 0.5 + 0.25 * np.where(xx < 8, 1.0, -1.0)
    b = 0.5 + 0.25 * np.where(yy < 8, 1.0, -1.0)
    fa, fb = PatchExtractor()(_full_box_video(a)[:, 0]), PatchExtractor()(_full_box_video(b)[:, 0])
    assert np.dot(fa, fb) == 0.0
    boxes = {1: [(0, 0, 16, 16)]}
    assert dsc(_full_box_video(a), _full_box_video(b), boxes).value == 0.0


def test_dsc_absent_subject_skipped():
    v = np.random.default_rng(0).uniform(size=(3, 2, 16, 16))
    r = dsc(v, v, {1: [None, None], 2: [(2, 2, 4, 4), None]})
    assert r.per_subject[1] is None and r.value == 1.0
    assert math.isnan(dsc(v, v, {1: [None, None]}).value)


def test_dsc_context_mode_temporal_normalisation():
    rng = np.random.default_rng(1)
    v = rng.uniform(size=(3, 4, 16, 16))
    ctx = v[:, [0, 0, 2, 2, 3, 3]]
    pred_boxes = {5: [(1, 1, 5, 5)] * 4}
    ctx_boxes = {5: [(1, 1, 5, 5)] * 6}
    r = dsc(v, ctx, pred_boxes, ctx_boxes)
    assert -1.0 <= r.value <= 1.0
    assert nearest_resample([0, 1, 2], 5) == [0, 0, 1, 2, 2]


def test_dsc_bounds_random(rng):
    for _ in range(100):
        a, b = rng.uniform(size=(2, 3, 2, 16, 16))
        boxes = {0: [(int(rng.integers(0, 10)), int(rng.integers(0, 10)), 5, 5)] * 2}
        assert -1.0 <= dsc(a, b, boxes).value <= 1.0


def test_extractors_deterministic_and_pluggable(clips):
    clip = clips[0]
    boxes = clip_boxes(clip, 0, clip.num_frames)
    noisy = np.clip(clip.frames + 0.1 * np.random.default_rng(0).standard_normal(clip.frames.shape), 0, 1)
    p1 = dsc(noisy, clip.frames, boxes)
    p2 = dsc(noisy, clip.frames, boxes)
    r = dsc(noisy, clip.frames, boxes, extractor=RandomProjectionExtractor())
    assert p1 == p2
    assert set(r.per_subject) == set(p1.per_subject) and r.value != p1.value


def test_box_crop_fidelity(clips):
    for clip in clips:
        for sid, seq in clip_boxes(clip, 0, clip.num_frames).items():
            for f, box in enumerate(seq):
                if box is None:
                    continue
                canvas = clip.frames[:, f].copy()
                piece = crop(clip.frames[:, f], box).copy()
                x0, y0, w, h = box
                canvas[:, y0:y0 + h, x0:x0 + w] = 0
                canvas[:, y0:y0 + h, x0:x0 + w] = piece
                assert np.array_equal(canvas, clip.frames[:, f])


# run report

def test_report_gt_against_itself(clips):
    splits = [16] * len(clips)
    preds = [c.frames[:, 16:] for c in clips]
    rep = evaluate_predictions(preds, clips, splits)
    assert len(rep.rows) == len(clips)
    for row in rep.rows:
        assert row["psnr"] == PSNR_INF and row["ssim"] == 1.0
        assert row["dsc_gt"] == 1.0 or math.isnan(row["dsc_gt"])


def test_report_aggregates_and_text(clips):
    rng = np.random.default_rng(0)
    splits = [20] * len(clips)
    preds = [np.clip(c.frames[:, 20:] + 0.1 * rng.standard_normal(c.frames[:, 20:].shape), 0, 1) for c in clips]
    rep = evaluate_predictions(preds, clips, splits, header={"run": "x"})
    for m in METRICS:
        vals = [v for v in rep.column(m) if not math.isnan(v)]
        assert rep.mean(m) == pytest.approx(np.mean(vals), rel=1e-12)
    text = rep.to_text()
    lines = text.splitlines()
    assert lines[0] == "# run: x" and lines[1] == "clip\tmetric\tvalue"
    assert sum(1 for ln in lines if ln.startswith("clip_") or ln.split("\t")[0].isdigit()) == len(clips) * 4
    assert "# summary" in lines
