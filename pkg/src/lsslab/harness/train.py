"""Training loop: tinynet + focal PID-Tversky (or BCE), per-epoch controller, early stopping."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import tinynet
from ..errors import InputError, NumericError
from ..imaging import augment
from ..metrics_seg import seg_score
from ..pidloss import (ConfusionCounts, bce_loss, focal_tversky_loss, hard_confusion,
                       imbalance_signal, pid_update)
from .checkpoint import save_tensors
from .config import TrainConfig
from .data import DatasetManifest, load_samples, prompt_tokens, prompt_vocab

log = logging.getLogger("lsslab.train")

CONTROLLER_FIELDS = ["epoch", "e_t", "u_t", "alpha", "beta", "fp", "fn"]


class EarlyStopping:
    """Stop once the monitored score fails to beat the best by ``min_delta``
    for ``patience`` consecutive epochs."""

    def __init__(self, patience: int, min_delta: float = 1e-4):
        self.patience = patience
        self.min_delta = min_delta
        self.best = -np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record a score; returns True when it is a new best."""
        if score > self.best + self.min_delta:
            self.best, self.best_epoch, self.stale = score, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


@dataclass
class TrainResult:
    params: dict
    buffers: dict
    geometry: tinynet.Geometry
    vocab: list
    history: list = field(default_factory=list)      # per-epoch records
    controller: list = field(default_factory=list)   # per-epoch controller rows
    lines: list = field(default_factory=list)        # line-oriented log
    best_epoch: int = 0
    stopped_epoch: int = 0


def _batches(order, size):
    for i in range(0, len(order), size):
        yield i // size + 1, order[i:i + size]


def predict(samples, params, buffers, geom, vocab, batch_size: int = 32) -> np.ndarray:
    """Eval-mode probability maps for a list of samples, shape (N, H, W)."""
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        imgs = np.stack([s.image for s in chunk])
        prompts = [prompt_tokens(s.prompt_grade, vocab) for s in chunk]
        out.append(tinynet.forward(imgs, prompts, params, geom, buffers, train=False).probs)
    return np.concatenate(out) if out else np.zeros((0, geom.image_size, geom.image_size))


def mean_dice(probs, samples) -> float:
    return float(np.mean([seg_score(p > 0.5, s.mask).dice for p, s in zip(probs, samples)]))


def train_samples(train_set, val_set, cfg: TrainConfig, vocab=None) -> TrainResult:
    if not train_set or not val_set:
        raise InputError("training needs non-empty train and val splits")
    vocab = list(vocab or prompt_vocab())
    geom = cfg.geometry(len(vocab))
    params = tinynet.init_params(geom, cfg.seed)
    buffers = tinynet.init_buffers(geom)
    opt_state = tinynet.AdamWState()
    opt_cfg = cfg.adamw()
    pid = cfg.pid_state()
    lp = cfg.loss_params()
    spec = cfg.augmentation()
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    res = TrainResult(params=params, buffers=buffers, geometry=geom, vocab=vocab)
    best = ({k: v.copy() for k, v in params.items()}, {k: v.copy() for k, v in buffers.items()})

    def emit(line):
        res.lines.append(line)
        log.info(line)

    adaptive = cfg.loss == "pid_tversky"
    for epoch in range(1, cfg.max_epochs + 1):
        alpha, beta = pid.alpha, pid.beta
        order = rng.permutation(len(train_set))
        losses = []
        for b, idx in _batches(order, cfg.batch_size):
            imgs, masks, prompts = [], [], []
            for i in idx:
                s = train_set[i]
                if cfg.augment:
                    img, mask = augment(s.image, s.mask, spec, rng)
                else:
                    img, mask = s.image, s.mask
                imgs.append(img)
                masks.append(mask)
                prompts.append(prompt_tokens(s.prompt_grade, vocab))
            imgs, masks = np.stack(imgs), np.stack(masks)
            try:
                fwd = tinynet.forward(imgs, prompts, params, geom, buffers, train=True)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from None
            if adaptive:
                loss, d_probs = focal_tversky_loss(fwd.probs, masks, alpha, beta, lp)
            else:
                loss, d_probs = bce_loss(fwd.probs, masks)
            if not np.isfinite(loss):
                raise NumericError(f"epoch {epoch} batch {b}: non-finite loss")
            try:
                grads = tinynet.backward(fwd, d_probs, params, geom)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {b}: {exc}") from None
            tinynet.optimizer_step(params, grads, opt_state, opt_cfg)
            losses.append(loss)
            emit(f"epoch={epoch} batch={b} loss={loss:.8f}")

        record = {"epoch": epoch, "train_loss": float(np.mean(losses)), "alpha": alpha, "beta": beta}
        if adaptive:
            probs = predict(train_set, params, buffers, geom, vocab)
            counts = ConfusionCounts(0, 0, 0, 0)
            for p, s in zip(probs, train_set):
                counts = counts + hard_confusion(p, s.mask)
            e = imbalance_signal(counts)
            pid, u = pid_update(pid, e)
            row = {"epoch": epoch, "e_t": e, "u_t": u, "alpha": pid.alpha, "beta": pid.beta,
                   "fp": int(counts.fp), "fn": int(counts.fn)}
            res.controller.append(row)
            record.update(e_t=e, u_t=u, next_alpha=pid.alpha, next_beta=pid.beta)
            emit(f"epoch={epoch} controller e_t={e:.8f} u_t={u:.8f} alpha={pid.alpha:.8f} "
                 f"beta={pid.beta:.8f} fp={int(counts.fp)} fn={int(counts.fn)}")

        val_dice = mean_dice(predict(val_set, params, buffers, geom, vocab), val_set)
        record["val_dice"] = val_dice
        improved = stopper.update(epoch, val_dice)
        if improved:
            best = ({k: v.copy() for k, v in params.items()}, {k: v.copy() for k, v in buffers.items()})
        record["best"] = improved
        res.history.append(record)
        emit(f"epoch={epoch} val dice={val_dice:.8f} best={stopper.best:.8f} stale={stopper.stale}")
        res.stopped_epoch = epoch
        if stopper.should_stop:
            emit(f"epoch={epoch} early_stop patience={cfg.patience} best_epoch={stopper.best_epoch}")
            break

    res.params, res.buffers = best
    res.best_epoch = stopper.best_epoch
    return res


def checkpoint_meta(res: TrainResult, cfg: TrainConfig) -> dict:
    return {"geometry": {k: getattr(res.geometry, k) for k in
                         ("image_size", "patch_size", "d_vis", "d_shared", "n_heads", "d_k", "vocab_size")},
            "vocab": res.vocab, "config": cfg.to_dict(), "best_epoch": res.best_epoch}


def write_run(res: TrainResult, cfg: TrainConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensors = dict(res.params)
    tensors.update(res.buffers)
    ckpt = save_tensors(out_dir / "checkpoint", tensors, checkpoint_meta(res, cfg))
    with (out_dir / "controller.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CONTROLLER_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in res.controller:
            w.writerow({k: (f"{v:.10f}" if isinstance(v, float) else v) for k, v in row.items()})
    with (out_dir / "epochs.jsonl").open("w", encoding="utf-8") as fh:
        for rec in res.history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (out_dir / "train.log").write_text("\n".join(res.lines) + "\n", encoding="utf-8")
    return {"checkpoint": str(ckpt), "controller": str(out_dir / "controller.csv"),
            "epochs": str(out_dir / "epochs.jsonl"), "log": str(out_dir / "train.log")}


def train(manifest: DatasetManifest, cfg: TrainConfig, out_dir=None) -> TrainResult:
    kw = dict(image_size=cfg.image_size, roi_fraction=cfg.roi_fraction, denoise=cfg.denoise, nlm_h=cfg.nlm_h)
    train_set = load_samples(manifest.split("train"), **kw)
    val_set = load_samples(manifest.split("val"), **kw)
    res = train_samples(train_set, val_set, cfg)
    if out_dir is not None:
        write_run(res, cfg, out_dir)
    return res
