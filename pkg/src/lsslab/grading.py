"""Affected-area quantification, grading, template reports, and report NLL."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ShapeError
from .pseudomask import Grade

GRADE_A_LIMIT = 10.0
GRADE_D_LIMIT = 25.0
LOGPROB_FLOOR = math.log(1e-12)


@dataclass(frozen=True)
class AreaStats:
    affected_pct: float
    foreground_pixels: int
    roi_pixels: int


def affected_area(mask, roi=None) -> AreaStats:
    """Percentage of the ROI covered by the mask (ROI defaults to the full image)."""
    mask = np.asarray(mask).astype(bool)
    roi = np.ones_like(mask) if roi is None else np.asarray(roi).astype(bool)
    if mask.shape != roi.shape:
        raise ShapeError(f"mask {mask.shape} and ROI {roi.shape} differ in shape")
    n_roi = int(np.count_nonzero(roi))
    if n_roi == 0:
        raise InputError("ROI is empty")
    fg = int(np.count_nonzero(mask & roi))
    return AreaStats(affected_pct=100.0 * fg / n_roi, foreground_pixels=fg, roi_pixels=n_roi)


def grade_from_area(pct: float) -> Grade:
    """A below 10%, BC on [10%, 25%] inclusive, D above 25%."""
    if not (0.0 <= pct <= 100.0):
        raise InputError(f"affected percentage {pct} outside [0, 100]")
    if pct < GRADE_A_LIMIT:
        return Grade.A
    if pct <= GRADE_D_LIMIT:
        return Grade.BC
    return Grade.D


# --------------------------------------------------------------------------
# Report context and template generation


@dataclass(frozen=True)
class MaskStats:
    count: int
    centroid_row: float
    centroid_col: float
    bbox: tuple  # (row0, col0, row1, col1) inclusive; all -1 when empty
    width: int

    def as_vector(self) -> np.ndarray:
        return np.array([self.count, self.centroid_row, self.centroid_col, *self.bbox], dtype=np.float64)


def mask_stats(mask) -> MaskStats:
    mask = np.asarray(mask).astype(bool)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return MaskStats(0, -1.0, -1.0, (-1, -1, -1, -1), mask.shape[1])
    return MaskStats(
        count=int(rows.size),
        centroid_row=float(rows.mean()),
        centroid_col=float(cols.mean()),
        bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
        width=mask.shape[1],
    )


@dataclass(frozen=True)
class ReportContext:
    pooled_visual: np.ndarray
    mask: MaskStats

    @property
    def aggregate(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.pooled_visual, dtype=np.float64).ravel(),
                               self.mask.as_vector()])


def build_context(pooled_visual, mask) -> ReportContext:
    return ReportContext(np.asarray(pooled_visual, dtype=np.float64), mask_stats(mask))


@dataclass
class Report:
    patient_id: str
    grade: Grade
    affected_pct: float
    lines: list
    tokens: list = field(default_factory=list)

    @property
    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


_IMPRESSION = {
    Grade.A: "Minimal or no significant stenosis, {pct}% of the region exhibits mild changes.",
    Grade.BC: ("Mild to moderate compression of the thecal sac with encroachment on nerve root "
               "canals, affecting {pct}% of the region."),
    Grade.D: "Severe spinal canal stenosis affecting {pct}% of the visualized area.",
}


def _location(ms: MaskStats) -> str:
    third = ms.width / 3.0
    if ms.centroid_col < third:
        return "left"
    if ms.centroid_col < 2 * third:
        return "central"
    return "right"


def generate_report(patient_id: str, ctx: ReportContext, stats: AreaStats, grade) -> Report:
    from .metrics_text import tokenize

    grade = Grade.parse(grade)
    pct = f"{stats.affected_pct:.1f}"
    header = f"Patient {patient_id}: axial lumbar spine MRI, grade {grade.value}."
    if ctx.mask.count:
        r0, c0, r1, c1 = ctx.mask.bbox
        findings = (f"Findings: {ctx.mask.count} segmented pixels centered in the "
                    f"{_location(ctx.mask)} canal region, rows {r0}-{r1}, columns {c0}-{c1}.")
    else:
        findings = "Findings: no segmented canal compression."
    lines = [header, _IMPRESSION[grade].format(pct=pct), findings]
    return Report(patient_id=str(patient_id), grade=grade, affected_pct=stats.affected_pct,
                  lines=lines, tokens=tokenize(" ".join(lines)))


def write_reports(reports, out_dir) -> Path:
    """One UTF-8 text file per patient plus ``index.jsonl``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = out_dir / "index.jsonl"
    with index.open("w", encoding="utf-8") as fh:
        for rep in reports:
            path = out_dir / f"{rep.patient_id}.txt"
            path.write_text(rep.text, encoding="utf-8")
            fh.write(json.dumps({"patient_id": rep.patient_id, "grade": rep.grade.value,
                                 "affected_pct": round(rep.affected_pct, 6),
                                 "report_path": path.name}, sort_keys=True) + "\n")
    return index


# --------------------------------------------------------------------------
# Autoregressive NLL


def arrg_nll(step_logprobs, gt_tokens) -> float:
    """``-sum_t log P(w*_t)`` summed over steps, with probabilities floored at 1e-12.

    ``step_logprobs`` is a (T, vocab) array of log-probabilities, one row per
    ground-truth step.
    """
    lp = np.asarray(step_logprobs, dtype=np.float64)
    gt = list(gt_tokens)
    if lp.ndim != 2 or lp.shape[0] != len(gt):
        raise InputError(f"{lp.shape[0] if lp.ndim else 0} distributions for {len(gt)} tokens")
    picked = lp[np.arange(len(gt)), gt] if gt else np.zeros(0)
    return float(-np.sum(np.maximum(picked, LOGPROB_FLOOR)))
