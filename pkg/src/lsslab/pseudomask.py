"""Report-conditioned pseudo-mask generation.

The radiologist report decides how aggressively the Otsu/Canny region is
grown: severe cases get a wide dilation plus closing, everything else a
small dilation followed by a localized erosion.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import imaging
from .errors import InputError, ParameterError


class Grade(str, enum.Enum):
    A = "A"
    BC = "BC"
    D = "D"

    @property
    def severity(self) -> int:
        return {"A": 0, "BC": 1, "D": 2}[self.value]

    @classmethod
    def parse(cls, value) -> "Grade":
        if isinstance(value, Grade):
            return value
        text = str(value).strip().upper().replace("&", "").replace(" ", "")
        if text in ("B", "C"):
            text = "BC"
        try:
            return cls(text)
        except ValueError:
            raise InputError(f"unknown grade {value!r}") from None


GRADES = (Grade.A, Grade.BC, Grade.D)

_NORMAL_CUES = ("no evidence", "no significant", "normal", "minimal")


def parse_severity(text: str) -> Grade:
    """Keyword rules, case-insensitive: 'severe' wins, then normal cues, else BC."""
    if not text or not text.strip():
        raise InputError("report text is empty")
    low = text.lower()
    if "severe" in low:
        return Grade.D
    if any(cue in low for cue in _NORMAL_CUES):
        return Grade.A
    return Grade.BC


@dataclass(frozen=True)
class PseudoMaskConfig:
    severe_kernel: int = 9
    mild_dilate_kernel: int = 5
    mild_erode_kernel: int = 3
    roi_fraction: float = 0.6
    canny_sigma: float = 1.4
    canny_low: float = 0.1
    canny_high: float = 0.3


def central_roi(shape, fraction: float = 0.6) -> np.ndarray:
    """Boolean window covering the central ``fraction`` of each axis.

    ``fraction=1`` gives the full image.
    """
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"ROI fraction must be in (0, 1], got {fraction}")
    H, W = shape
    roi = np.zeros((H, W), dtype=bool)
    h = max(1, int(round(H * fraction)))
    w = max(1, int(round(W * fraction)))
    top, left = (H - h) // 2, (W - w) // 2
    roi[top:top + h, left:left + w] = True
    return roi


def initial_region(img, cfg: PseudoMaskConfig = PseudoMaskConfig()) -> np.ndarray:
    """Union of the Otsu foreground and the Canny edge map."""
    _, bright = imaging.otsu_threshold(img)
    edges = imaging.canny_edges(img, cfg.canny_sigma, cfg.canny_low, cfg.canny_high)
    return bright | edges


def refine_region(region, grade: Grade, cfg: PseudoMaskConfig = PseudoMaskConfig()) -> np.ndarray:
    grade = Grade.parse(grade)
    if grade is Grade.D:
        k = cfg.severe_kernel
        return imaging.close(imaging.dilate(region, k), k)
    grown = imaging.dilate(region, cfg.mild_dilate_kernel)
    return imaging.erode(grown, cfg.mild_erode_kernel)


def generate_pseudo_mask(img, grade, cfg: PseudoMaskConfig = PseudoMaskConfig()) -> np.ndarray:
    img = imaging.as_image(img)
    region = refine_region(initial_region(img, cfg), grade, cfg)
    return region & central_roi(img.shape, cfg.roi_fraction)
