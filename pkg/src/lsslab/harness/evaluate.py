"""Evaluation protocol and the loss ablation."""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import tinynet
from ..errors import ConfigError
from ..grading import affected_area, build_context, generate_report, grade_from_area, write_reports
from ..metrics_seg import class_table, classification_report, hausdorff, seg_score, seg_table
from ..metrics_text import evaluate_corpus, tokenize
from ..pseudomask import GRADES, central_roi
from .checkpoint import load_tensors
from .config import TrainConfig
from .data import DatasetManifest, load_samples
from .train import TrainResult, predict, train_samples, write_run

SEG_KEYS = ("dice", "iou", "precision", "recall", "specificity")


def _finite(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_finite(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _mean_scores(scores) -> dict:
    if not scores:
        return {k: None for k in SEG_KEYS}
    return {k: float(np.mean([getattr(s, k) for s in scores])) for k in SEG_KEYS}


def evaluate_predictions(samples, pred_masks, roi_fraction: float = 0.6, pooled=None):
    """Score predicted masks against the samples' masks, grades and reports.

    Returns ``(metrics, reports)``; ``pooled`` optionally supplies the mean
    patch feature per sample for the report context.
    """
    roi = central_roi(samples[0].mask.shape, roi_fraction) if samples else None
    scores, hds, preds, reports = [], [], [], []
    per_image = []
    for i, (s, pm) in enumerate(zip(samples, pred_masks)):
        pm = np.asarray(pm, dtype=bool)
        sc = seg_score(pm, s.mask)
        hd = hausdorff(pm, s.mask)
        stats = affected_area(pm, roi)
        grade = grade_from_area(stats.affected_pct)
        ctx = build_context(pooled[i] if pooled is not None else np.zeros(0), pm)
        reports.append(generate_report(s.patient_id, ctx, stats, grade))
        scores.append(sc)
        hds.append(hd)
        preds.append(grade)
        per_image.append({"patient_id": s.patient_id, **asdict(sc), "hausdorff": hd,
                          "affected_pct": stats.affected_pct, "pred_grade": grade.value,
                          "true_grade": s.grade.value})

    by_grade = {g.value: _mean_scores([sc for sc, s in zip(scores, samples) if s.grade is g])
                for g in GRADES}
    finite_hd = [h for h in hds if math.isfinite(h)]
    cls = classification_report(preds, [s.grade for s in samples])
    text = evaluate_corpus([r.tokens for r in reports], [[tokenize(s.report_text)] for s in samples])
    metrics = {
        "segmentation": {"overall": _mean_scores(scores), "by_grade": by_grade,
                         "hausdorff_mean": float(np.mean(finite_hd)) if finite_hd else None,
                         "hausdorff_infinite": len(hds) - len(finite_hd)},
        "classification": cls.to_dict(),
        "text": text,
        "per_image": per_image,
        "n_images": len(samples),
    }
    return metrics, reports


def load_model(checkpoint):
    tensors, meta = load_tensors(checkpoint)
    geom = tinynet.Geometry(**meta["geometry"])
    buffers = {k: v for k, v in tensors.items() if k.endswith(("running_mean", "running_var"))}
    params = {k: v for k, v in tensors.items() if k not in buffers}
    expected = tinynet.init_params(geom)
    for name, arr in expected.items():
        if name not in params or params[name].shape != arr.shape:
            raise ConfigError(f"checkpoint tensor {name} does not match its geometry")
    return params, buffers, geom, meta["vocab"], TrainConfig(**meta["config"])


def evaluate_model(samples, params, buffers, geom, vocab, roi_fraction: float):
    for s in samples:
        if s.image.shape != (geom.image_size, geom.image_size):
            raise ConfigError(f"image {s.patient_id} shape {s.image.shape} does not match "
                              f"checkpoint geometry {geom.image_size}")
    probs = predict(samples, params, buffers, geom, vocab)
    pooled = []
    for s in samples:
        fv = tinynet.embed_patches(s.image, params, geom.patch_size)
        pooled.append(fv.mean(axis=0))
    return evaluate_predictions(samples, probs > 0.5, roi_fraction, pooled)


def write_eval(metrics, reports, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_json(metrics, out_dir / "metrics.json")
    write_reports(reports, out_dir / "reports")
    seg = metrics["segmentation"]
    rows = {**{f"grade {g}": v for g, v in seg["by_grade"].items() if v["dice"] is not None},
            "overall": seg["overall"]}
    from ..metrics_seg import ClassReport
    text = ["segmentation", seg_table(rows), "classification",
            class_table(ClassReport(**metrics["classification"])), "report text",
            "  ".join(f"{k}={v:.4f}" for k, v in metrics["text"].items() if isinstance(v, float))]
    (out_dir / "tables.txt").write_text("\n".join(text) + "\n", encoding="utf-8")


def evaluate(checkpoint, manifest: DatasetManifest, split: str = "test", out_dir=None):
    params, buffers, geom, vocab, cfg = load_model(checkpoint)
    samples = load_samples(manifest.split(split), image_size=geom.image_size,
                           roi_fraction=cfg.roi_fraction, denoise=cfg.denoise, nlm_h=cfg.nlm_h)
    metrics, reports = evaluate_model(samples, params, buffers, geom, vocab, cfg.roi_fraction)
    if out_dir is not None:
        write_eval(metrics, reports, out_dir)
    return metrics


# --------------------------------------------------------------------------
# Ablation


ARMS = {"cross_entropy": "bce", "pid_tversky": "pid_tversky"}


def ablation_samples(train_set, val_set, cfg: TrainConfig, workers: int = 1):
    """Train both loss arms with identical data, seed and settings; score on val."""
    def run(loss):
        return train_samples(train_set, val_set, cfg.replace(loss=loss))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = dict(zip(ARMS, pool.map(run, ARMS.values())))
    table, trajectories = {}, {}
    for arm, res in results.items():
        probs = predict(val_set, res.params, res.buffers, res.geometry, res.vocab)
        scores = [seg_score(p > 0.5, s.mask) for p, s in zip(probs, val_set)]
        table[arm] = _mean_scores(scores)
        table[arm]["epochs"] = res.stopped_epoch
        table[arm]["best_epoch"] = res.best_epoch
        trajectories[arm] = [{"epoch": r["epoch"], "alpha": r["alpha"], "beta": r["beta"]}
                             for r in res.controller]
    return {"table": table, "trajectory": trajectories["pid_tversky"],
            "delta": {k: table["pid_tversky"][k] - table["cross_entropy"][k] for k in SEG_KEYS}}, results


def ablation(manifest: DatasetManifest, cfg: TrainConfig, out_dir=None):
    kw = dict(image_size=cfg.image_size, roi_fraction=cfg.roi_fraction, denoise=cfg.denoise, nlm_h=cfg.nlm_h)
    train_set = load_samples(manifest.split("train"), **kw)
    val_set = load_samples(manifest.split("val"), **kw)
    summary, results = ablation_samples(train_set, val_set, cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for arm, res in results.items():
            write_run(res, cfg.replace(loss=ARMS[arm]), out_dir / arm)
        dump_json(summary, out_dir / "ablation.json")
        (out_dir / "ablation.txt").write_text(seg_table(summary["table"]), encoding="utf-8")
    return summary


__all__ = ["evaluate", "evaluate_predictions", "evaluate_model", "load_model", "ablation",
           "ablation_samples", "write_eval", "TrainResult"]
