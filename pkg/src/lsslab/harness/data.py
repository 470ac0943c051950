"""Dataset manifest loading, deterministic splits, and in-memory samples.

Layout under a dataset root::

    manifest.csv        patient_id,image,report,grade[,mask]
    images/             PNG/PGM, 8- or 16-bit grayscale
    reports/            UTF-8 report text
    masks/ (optional)   reference masks; otherwise pseudo-masks are built at load
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import imageio
from ..errors import LoadError, ParseError
from ..imaging import NlmParams, nlm_denoise
from ..pseudomask import Grade, PseudoMaskConfig, generate_pseudo_mask, parse_severity

REQUIRED_COLUMNS = ("patient_id", "image", "report", "grade")

PROMPTS = {
    Grade.A: "normal spinal canal with free thecal sac",
    Grade.BC: "mild to moderate compression of the thecal sac",
    Grade.D: "severe spinal canal stenosis with thecal sac compression",
}


def prompt_vocab() -> list[str]:
    return sorted({w for text in PROMPTS.values() for w in text.split()})


def prompt_tokens(grade: Grade, vocab) -> list[int]:
    index = {w: i for i, w in enumerate(vocab)}
    return [index[w] for w in PROMPTS[grade].split()]


@dataclass(frozen=True)
class Record:
    patient_id: str
    image_path: Path
    report_path: Path
    grade: Grade
    mask_path: Path | None = None


@dataclass
class DatasetManifest:
    root: Path
    records: list
    splits: dict = field(default_factory=dict)  # split name -> list of record indices
    seed: int = 0

    def split(self, name: str) -> list:
        if name not in self.splits:
            raise LoadError(f"unknown split {name!r}")
        return [self.records[i] for i in self.splits[name]]


def split_sizes(n: int, train_fraction: float = 0.70, val_fraction: float = 0.15):
    """Floor the train and val shares; the test split takes the remainder."""
    n_train = math.floor(n * train_fraction)
    n_val = math.floor(n * val_fraction)
    return n_train, n_val, n - n_train - n_val


def load_dataset(root, seed: int = 0, train_fraction: float = 0.70, val_fraction: float = 0.15,
                 splits: dict | None = None) -> DatasetManifest:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.is_file():
        raise LoadError(f"missing manifest: {manifest}")
    records = []
    with manifest.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("manifest is empty", 1) from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"manifest lacks columns {missing}", 1)
        col = {name: i for i, name in enumerate(header)}
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            get = lambda name: row[col[name]].strip()  # noqa: E731
            pid = get("patient_id")
            if not pid:
                raise ParseError("empty patient_id", lineno)
            try:
                grade = Grade.parse(get("grade"))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            image = root / get("image")
            report = root / get("report")
            mask = root / get("mask") if "mask" in col and get("mask") else None
            for kind, path in (("image", image), ("report", report), ("mask", mask)):
                if path is not None and not path.is_file():
                    raise LoadError(f"record {pid}: {kind} file not found: {path}")
            records.append(Record(pid, image, report, grade, mask))
    if splits is None:
        order = np.random.default_rng(seed).permutation(len(records))
        n_train, n_val, _ = split_sizes(len(records), train_fraction, val_fraction)
        splits = {
            "train": sorted(order[:n_train].tolist()),
            "val": sorted(order[n_train:n_train + n_val].tolist()),
            "test": sorted(order[n_train + n_val:].tolist()),
        }
    return DatasetManifest(root=root, records=records, splits=splits, seed=seed)


@dataclass
class Sample:
    patient_id: str
    image: np.ndarray
    mask: np.ndarray
    grade: Grade
    prompt_grade: Grade
    report_text: str


def load_samples(records, image_size: int, roi_fraction: float = 0.6, denoise: bool = False,
                 nlm_h: float = 0.08) -> list[Sample]:
    """Read images, masks (or build pseudo-masks once) and report texts."""
    out = []
    pm_cfg = PseudoMaskConfig(roi_fraction=roi_fraction)
    for rec in records:
        img = imageio.resize_image(imageio.read_gray(rec.image_path), image_size)
        if denoise:
            img = nlm_denoise(img, NlmParams(h=nlm_h))
        text = rec.report_path.read_text(encoding="utf-8")
        prompt_grade = parse_severity(text)
        if rec.mask_path is not None:
            mask = imageio.resize_mask(imageio.read_mask(rec.mask_path), image_size)
        else:
            mask = generate_pseudo_mask(img, prompt_grade, pm_cfg)
        out.append(Sample(rec.patient_id, img, mask, rec.grade, prompt_grade, text))
    return out
