"""Synthetic blob phantoms and an on-disk corpus in the dataset layout."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy import ndimage

from .. import imageio
from ..grading import affected_area, grade_from_area
from ..pseudomask import Grade, central_roi

REFERENCE_REPORTS = {
    Grade.A: [
        "No evidence of disc herniation. The thecal sac and nerve roots appear normal.",
        "Normal spinal canal dimensions with no significant narrowing.",
    ],
    Grade.BC: [
        "Diffuse disc bulges mildly compressing the thecal sac with encroachment on nerve root canals.",
        "Mild to moderate compression of the thecal sac and lateral recesses.",
    ],
    Grade.D: [
        "Severe spinal canal stenosis with marked compression of the thecal sac.",
        "Severe foraminal narrowing, facet joint hypertrophy and severe thecal sac compression.",
    ],
}


def make_phantom(rng: np.random.Generator, size: int = 64, fg_range=(0.02, 0.08),
                 contrast: float = 0.30, noise: float = 0.10, roi_fraction: float = 0.6):
    """One noisy image with a single bright ellipse inside the central ROI.

    Foreground area is drawn uniformly from ``fg_range`` (fraction of the
    image), so the corpus averages about 5% foreground.
    """
    area = rng.uniform(*fg_range) * size * size
    ratio = rng.uniform(0.6, 1.0)
    a = np.sqrt(area / (np.pi * ratio))
    b = a * ratio
    theta = rng.uniform(0, np.pi)
    roi = central_roi((size, size), roi_fraction)
    rows, cols = np.nonzero(roi)
    margin = int(np.ceil(a))
    r0, r1 = rows.min() + margin, rows.max() - margin
    c0, c1 = cols.min() + margin, cols.max() - margin
    cy = rng.uniform(r0, max(r0, r1))
    cx = rng.uniform(c0, max(c0, c1))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    ct, st = np.cos(theta), np.sin(theta)
    u = ((xx - cx) * ct + (yy - cy) * st) / a
    v = (-(xx - cx) * st + (yy - cy) * ct) / b
    mask = u ** 2 + v ** 2 <= 1.0

    texture = ndimage.gaussian_filter(rng.normal(0, 1, (size, size)), 4.0)
    texture /= texture.std() + 1e-12
    img = 0.35 + 0.06 * texture
    img = img + contrast * ndimage.gaussian_filter(mask.astype(np.float64), 1.0)
    img = img + rng.normal(0, noise, (size, size))
    return np.clip(img, 0.0, 1.0), mask


def make_corpus(root, n: int, seed: int = 0, size: int = 64, roi_fraction: float = 0.6, **phantom_kw):
    """Write ``n`` phantoms with masks, grade labels and reference reports."""
    root = Path(root)
    for sub in ("images", "masks", "reports"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    roi = central_roi((size, size), roi_fraction)
    rows = []
    for i in range(n):
        img, mask = make_phantom(rng, size=size, roi_fraction=roi_fraction, **phantom_kw)
        grade = grade_from_area(affected_area(mask, roi).affected_pct)
        pid = f"P{i:04d}"
        imageio.write_gray(img, root / "images" / f"{pid}.png")
        imageio.write_mask(mask, root / "masks" / f"{pid}.png")
        choices = REFERENCE_REPORTS[grade]
        text = choices[int(rng.integers(len(choices)))]
        (root / "reports" / f"{pid}.txt").write_text(text + "\n", encoding="utf-8")
        rows.append([pid, f"images/{pid}.png", f"reports/{pid}.txt", grade.value, f"masks/{pid}.png"])
    with (root / "manifest.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "image", "report", "grade", "mask"])
        w.writerows(rows)
    return root
