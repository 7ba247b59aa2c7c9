"""Training/evaluation drivers shared by the CLI and the acceptance suite."""

import math
from dataclasses import replace

from .metrics import METRICS, bootstrap_std, evaluate_predictions
from .model import HybridMemoryDiT
from .predict import predict_video
from .trainer import Adam, TrainLoop
from .world.clip import default_split


def build(config):
    model = HybridMemoryDiT(config.model)
    t = config.train
    optim = Adam(model.named_parameters(), lr=t.lr, betas=t.betas, warmup=t.warmup, grad_clip=t.grad_clip)
    return model, optim


def train_model(config, clips, steps=None, log=None, checkpoint=None, model=None, optim=None):
    """Train (or continue training) on ``clips``; returns (model, optim, losses)."""
    if model is None:
        model, optim = build(config)
    t = config.train
    loop = TrainLoop(model, optim, clips, batch_size=t.batch_size, seed=t.seed)
    losses = loop.run(t.steps if steps is None else steps, log=log, log_interval=t.log_interval,
                      checkpoint=checkpoint, checkpoint_interval=t.checkpoint_interval)
    return model, optim, losses


def evaluate(model, config, clips, record=None):
    """Sample each clip's target and score it. ``record`` (list) collects
    per-clip selection logs when given."""
    e = config.eval
    preds, splits = [], []
    for clip in clips:
        n = e.split if e.split is not None else default_split(clip)
        rec = [] if record is not None else None
        preds.append(predict_video(model, clip, n, e.sample_steps, e.seed, record=rec))
        splits.append(n)
        if record is not None:
            record.append({"seed": clip.seed, "n_ctx": n, "selections": rec})
    header = {"config_hash": config.hash(), "world_hash": config.world_hash(),
              "retrieval": config.model.retrieval}
    return evaluate_predictions(preds, clips, splits, [f"clip_{c.seed:08d}" for c in clips], header=header)


# ablation grids

def kernel_grid(base):
    cells = []
    for kt in (1, 2):
        for s in (2, 4, 8):
            m = replace(base.model, tokenizer_kernel=(kt, s, s), tokenizer_stride=(1, s, s), pooled=None)
            cells.append((f"T={kt} {s}x{s}", replace(base, model=m)))
    return cells


def tokens_grid(base):
    return [(f"K={k}", replace(base, model=replace(base.model, top_k=k))) for k in (5, 10, 15)]


def retrieval_grid(base):
    out = []
    for mode in ("fov_overlap", "dynamic_affinity", "dense_baseline"):
        out.append((mode, replace(base, model=replace(base.model, retrieval=mode))))
    return out


SUITES = {"kernel": kernel_grid, "tokens": tokens_grid, "retrieval": retrieval_grid}


def run_suite(suite, base, train, test, steps=None, log=None):
    """Train and evaluate every grid cell with identical seeds.

    Returns a list of row dicts; a failing cell is recorded with its error.
    """
    rows = []
    for label, cfg in SUITES[suite](base):
        try:
            cfg = cfg.validate()
            model, _, losses = train_model(cfg, train, steps=steps)
            report = evaluate(model, cfg, test)
            row = {"cell": label, "config_hash": cfg.hash(), "train_seed": cfg.train.seed,
                   "eval_seed": cfg.eval.seed, "final_loss": losses[-1] if losses else math.nan, "error": ""}
            for m in METRICS:
                row[m] = report.mean(m)
                row[m + "_boot_std"] = bootstrap_std(report.column(m))
        except Exception as exc:  # noqa: BLE001 - recorded, suite continues
            row = {"cell": label, "error": f"{type(exc).__name__}: {exc}"}
        rows.append(row)
        if log is not None:
            log(row)
    return rows


def format_suite(suite, rows, base):
    seeds = {(r.get("train_seed"), r.get("eval_seed")) for r in rows if not r.get("error")}
    lines = [f"# suite: {suite}", f"# base_config_hash: {base.hash()}",
             f"# identical_seeds: {len(seeds) <= 1} {sorted(seeds)}",
             "\t".join(["cell", *METRICS, "error"])]
    for r in rows:
        vals = [f"{r[m]:.4f}" if m in r else "-" for m in METRICS]
        lines.append("\t".join([r["cell"], *vals, r.get("error", "")]))
    return "\n".join(lines) + "\n"
