"""Command-line entry point.

Subcommands: denoise, pseudomask, train, eval, report, metrics, ablate, synth.
Exit codes: 0 ok, 1 input error, 2 runtime error. Outputs default to
``$LSSLAB_OUTPUT_ROOT/<subcommand>`` (or ``./runs/<subcommand>``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import imageio
from .errors import InputError, LoadError, LssError
from .grading import affected_area, build_context, generate_report, grade_from_area, write_reports
from .imaging import NlmParams, nlm_denoise
from .metrics_text import evaluate_corpus, tokenize
from .pseudomask import PseudoMaskConfig, central_roi, generate_pseudo_mask, parse_severity

OUTPUT_ENV = "LSSLAB_OUTPUT_ROOT"
IMAGE_SUFFIXES = (".png", ".pgm")

log = logging.getLogger("lsslab")


def _out_dir(args, name) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV, "runs")) / name


def _images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _config(args):
    from .harness.config import load_config
    overrides = list(args.set or [])
    for flag in ("seed", "max_epochs", "loss"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{flag}={value}")
    return load_config(args.config, overrides)


def cmd_denoise(args):
    out = _out_dir(args, "denoise")
    out.mkdir(parents=True, exist_ok=True)
    params = NlmParams(args.h, args.patch_radius, args.search_radius)
    for path in _images(args.input):
        imageio.write_gray(nlm_denoise(imageio.read_gray(path), params), out / f"{path.stem}.png")
        log.info("denoised %s", path.name)


def cmd_pseudomask(args):
    out = _out_dir(args, "pseudomask")
    out.mkdir(parents=True, exist_ok=True)
    cfg = PseudoMaskConfig(roi_fraction=args.roi_fraction)
    for path in _images(args.input):
        report = Path(args.reports) / f"{path.stem}.txt"
        if not report.is_file():
            raise LoadError(f"no report for {path.name}: expected {report}")
        grade = parse_severity(report.read_text(encoding="utf-8"))
        mask = generate_pseudo_mask(imageio.read_gray(path), grade, cfg)
        imageio.write_mask(mask, out / f"{path.stem}.png")
        sidecar = {"patient_id": path.stem, "grade": grade.value, "foreground_pixels": int(mask.sum())}
        (out / f"{path.stem}.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8")
        log.info("pseudomask %s grade=%s fg=%d", path.stem, grade.value, sidecar["foreground_pixels"])


def cmd_train(args):
    from .harness.data import load_dataset
    from .harness.train import train
    cfg = _config(args)
    manifest = load_dataset(args.data, seed=cfg.seed, train_fraction=cfg.train_fraction,
                            val_fraction=cfg.val_fraction)
    out = _out_dir(args, "train")
    res = train(manifest, cfg, out)
    print(f"stopped at epoch {res.stopped_epoch}, best epoch {res.best_epoch}; outputs in {out}")


def cmd_eval(args):
    from .harness.data import load_dataset
    from .harness.evaluate import evaluate, load_model
    cfg = load_model(args.checkpoint)[4]
    manifest = load_dataset(args.data, seed=cfg.seed, train_fraction=cfg.train_fraction,
                            val_fraction=cfg.val_fraction)
    out = _out_dir(args, "eval")
    metrics = evaluate(args.checkpoint, manifest, args.split, out)
    seg = metrics["segmentation"]["overall"]
    print(f"dice={seg['dice']:.4f} accuracy={metrics['classification']['accuracy']:.4f}; outputs in {out}")


def cmd_report(args):
    out = _out_dir(args, "report")
    reports = []
    for path in _images(args.masks):
        mask = imageio.read_mask(path)
        roi = central_roi(mask.shape, args.roi_fraction)
        stats = affected_area(mask, roi)
        grade = grade_from_area(stats.affected_pct)
        reports.append(generate_report(path.stem, build_context(np.zeros(0), mask), stats, grade))
    write_reports(reports, out)
    print(f"{len(reports)} reports written to {out}")


def _texts(directory) -> dict:
    directory = Path(directory)
    if not directory.is_dir():
        raise LoadError(f"not a directory: {directory}")
    return {p.stem: p.read_text(encoding="utf-8") for p in sorted(directory.glob("*.txt"))}


def cmd_metrics(args):
    cands, refs = _texts(args.cand), _texts(args.refs)
    missing = sorted(set(cands) - set(refs))
    if missing:
        raise InputError(f"no reference for candidates: {', '.join(missing[:5])}")
    if not cands:
        raise InputError(f"no candidate .txt files in {args.cand}")
    keys = sorted(cands)
    row = evaluate_corpus([tokenize(cands[k]) for k in keys], [[tokenize(refs[k])] for k in keys])
    out = Path(args.out) if args.out else _out_dir(args, "metrics") / "metrics.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(row, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print("  ".join(f"{k}={v:.4f}" for k, v in row.items() if isinstance(v, float)))


def cmd_ablate(args):
    from .harness.data import load_dataset
    from .harness.evaluate import ablation
    cfg = _config(args)
    manifest = load_dataset(args.data, seed=cfg.seed, train_fraction=cfg.train_fraction,
                            val_fraction=cfg.val_fraction)
    out = _out_dir(args, "ablate")
    summary = ablation(manifest, cfg, out)
    for arm, row in summary["table"].items():
        print(f"{arm:<14} dice={row['dice']:.4f} iou={row['iou']:.4f} precision={row['precision']:.4f} "
              f"recall={row['recall']:.4f} specificity={row['specificity']:.4f}")


def cmd_synth(args):
    from .harness.synth import make_corpus
    out = _out_dir(args, "synth")
    make_corpus(out, args.n, seed=args.seed, size=args.size)
    print(f"{args.n} phantoms written to {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsslab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--max-epochs", dest="max_epochs", type=int)

    sp = sub.add_parser("denoise", help="non-local means over a directory of images")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out")
    sp.add_argument("--h", type=float, default=0.08)
    sp.add_argument("--patch-radius", type=int, default=1)
    sp.add_argument("--search-radius", type=int, default=5)
    sp.set_defaults(func=cmd_denoise)

    sp = sub.add_parser("pseudomask", help="report-conditioned pseudo-masks")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--reports", required=True)
    sp.add_argument("--out")
    sp.add_argument("--roi-fraction", type=float, default=0.6)
    sp.set_defaults(func=cmd_pseudomask)

    sp = sub.add_parser("train", help="train the segmentation network")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    sp.add_argument("--loss", choices=["pid_tversky", "bce"])
    with_config(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test", choices=["train", "val", "test"])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="grade masks and write template reports")
    sp.add_argument("--masks", required=True)
    sp.add_argument("--out")
    sp.add_argument("--roi-fraction", type=float, default=0.6)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("metrics", help="text metrics for candidate vs reference reports")
    sp.add_argument("--cand", required=True)
    sp.add_argument("--refs", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("ablate", help="cross-entropy vs PID-Tversky paired runs")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")
    with_config(sp)
    sp.set_defaults(func=cmd_ablate, loss=None)

    sp = sub.add_parser("synth", help="write a synthetic blob corpus")
    sp.add_argument("--n", type=int, default=250)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LssError, OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
