"""Classical image kernels: non-local means, Otsu, Canny, binary morphology,
and the paired image/mask augmentation used at training time.

Images are 2-D float64 arrays in [0, 1]; masks are 2-D bool arrays of the
same shape. All functions are pure; randomness is passed in explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, InputError, ParameterError, ShapeError

OTSU_BINS = 256


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise InputError("image intensities must be finite and within [0, 1]")
    return arr


def as_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D mask, got shape {arr.shape}")
    return arr.astype(bool)


def normalize_intensity(raw: np.ndarray) -> np.ndarray:
    """Map an integer container (8/12/16-bit) to [0, 1].

    16-bit containers whose maximum fits in 12 bits are treated as 12-bit
    data and divided by 4095; otherwise the container maximum is used.
    """
    raw = np.asarray(raw)
    if raw.dtype == np.uint8:
        return raw.astype(np.float64) / 255.0
    if np.issubdtype(raw.dtype, np.integer):
        peak = int(raw.max()) if raw.size else 0
        scale = 4095.0 if peak <= 4095 else float(np.iinfo(raw.dtype).max)
        return np.clip(raw.astype(np.float64) / scale, 0.0, 1.0)
    return np.clip(raw.astype(np.float64), 0.0, 1.0)


# --------------------------------------------------------------------------
# Non-local means


@dataclass(frozen=True)
class NlmParams:
    h: float = 0.08
    patch_radius: int = 1
    search_radius: int = 5

    def validate(self) -> None:
        if not self.h > 0:
            raise ParameterError(f"NLM decay h must be positive, got {self.h}")
        if self.patch_radius < 1 or self.search_radius < 1:
            raise ParameterError("NLM radii must be >= 1")
        if self.search_radius < self.patch_radius:
            raise ParameterError("search_radius must be >= patch_radius")


def nlm_denoise(img, params: NlmParams = NlmParams()) -> np.ndarray:
    """Non-local means with patch distance ``||N_i - N_j||^2`` (sum of squares).

    The self weight is capped at the largest non-self weight in the search
    window. Borders use edge replication for both patches and the window.
    """
    params.validate()
    img = as_image(img)
    f, s = params.patch_radius, params.search_radius
    pad = f + s
    padded = np.pad(img, pad, mode="edge")
    H, W = img.shape
    inner = padded[s:s + H + 2 * f, s:s + W + 2 * f]

    offsets = [(dy, dx) for dy in range(-s, s + 1) for dx in range(-s, s + 1)
               if (dy, dx) != (0, 0)]
    dists = np.empty((len(offsets), H, W))
    values = np.empty((len(offsets), H, W))
    side = 2 * f + 1
    for k, (dy, dx) in enumerate(offsets):
        shifted = padded[s + dy:s + dy + H + 2 * f, s + dx:s + dx + W + 2 * f]
        sq = (inner - shifted) ** 2
        # box sum over the patch, evaluated only at the H x W valid centres
        dists[k] = ndimage.uniform_filter(sq, size=side, mode="constant")[f:f + H, f:f + W] * side * side
        values[k] = shifted[f:f + H, f:f + W]
    # uniform_filter rounding can leave tiny negatives
    np.maximum(dists, 0.0, out=dists)

    d_min = dists.min(axis=0)
    weights = np.exp(-(dists - d_min) / params.h ** 2)
    # self weight = max non-self weight = exp(0) after the shift
    num = (weights * values).sum(axis=0) + img
    den = weights.sum(axis=0) + 1.0
    return np.clip(num / den, 0.0, 1.0)


# --------------------------------------------------------------------------
# Otsu


def _otsu_bins(img: np.ndarray) -> np.ndarray:
    # bin k holds (k/256, (k+1)/256]; 0.0 goes to bin 0
    return np.clip(np.ceil(img * OTSU_BINS).astype(np.int64) - 1, 0, OTSU_BINS - 1)


def otsu_threshold(img) -> tuple[float, np.ndarray]:
    """Return ``(threshold, img > threshold)`` maximising between-class variance.

    Candidate thresholds are the 255 interior bin edges of a 256-bin
    histogram over [0, 1]; class means use the actual pixel intensities.
    Ties go to the lowest threshold.
    """
    img = as_image(img)
    bins = _otsu_bins(img).ravel()
    counts = np.bincount(bins, minlength=OTSU_BINS).astype(np.float64)
    sums = np.bincount(bins, weights=img.ravel(), minlength=OTSU_BINS)
    if np.count_nonzero(counts) < 2:
        raise DegenerateInputError("Otsu needs at least two populated intensity bins")

    n = counts.sum()
    c0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(sums)[:-1]
    c1 = n - c0
    s1 = sums.sum() - s0
    valid = (c0 > 0) & (c1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = s0 / c0
        mu1 = s1 / c1
        between = (c0 / n) * (c1 / n) * (mu0 - mu1) ** 2
    between = np.where(valid, between, -1.0)
    k = int(np.argmax(between))
    threshold = (k + 1) / OTSU_BINS
    return threshold, img > threshold


# --------------------------------------------------------------------------
# Canny


def canny_edges(img, sigma: float = 1.4, low: float = 0.1, high: float = 0.3) -> np.ndarray:
    """Canny edge detector; thresholds are fractions of the peak gradient."""
    if not (0 < low < high <= 1):
        raise ParameterError(f"need 0 < low < high <= 1, got low={low}, high={high}")
    img = as_image(img)
    smooth = ndimage.gaussian_filter(img, sigma, mode="nearest") if sigma > 0 else img
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0:
        return np.zeros(img.shape, dtype=bool)

    thin = _non_max_suppress(mag, gx, gy)
    strong = thin >= high * peak
    weak = thin >= low * peak
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(img.shape, dtype=bool)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def _non_max_suppress(mag, gx, gy):
    # gradient direction folded into [0, 180) and quantised to 4 sectors
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    # neighbour step (drow, dcol) along the gradient for each sector
    steps = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1, mode="constant")
    H, W = mag.shape
    out = np.zeros_like(mag)
    for sec, (dr, dc) in steps.items():
        fwd = padded[1 + dr:1 + dr + H, 1 + dc:1 + dc + W]
        bwd = padded[1 - dr:1 - dr + H, 1 - dc:1 - dc + W]
        # strict on one side so symmetric plateaus collapse to one pixel
        keep = (sector == sec) & (mag > fwd) & (mag >= bwd)
        out[keep] = mag[keep]
    return out


# --------------------------------------------------------------------------
# Morphology


@dataclass(frozen=True)
class Kernel:
    side: int

    def __post_init__(self):
        if self.side < 1 or self.side % 2 == 0:
            raise ParameterError(f"kernel side must be odd and >= 1, got {self.side}")

    @property
    def radius(self) -> int:
        return self.side // 2

    def footprint(self) -> np.ndarray:
        return np.ones((self.side, self.side), dtype=bool)


def _kernel(k) -> Kernel:
    return k if isinstance(k, Kernel) else Kernel(int(k))


def dilate(mask, k) -> np.ndarray:
    k = _kernel(k)
    return ndimage.binary_dilation(as_mask(mask), structure=k.footprint())


def erode(mask, k) -> np.ndarray:
    k = _kernel(k)
    return ndimage.binary_erosion(as_mask(mask), structure=k.footprint(), border_value=0)


def close(mask, k) -> np.ndarray:
    """Dilate then erode, evaluated on a canvas padded by the kernel radius.

    Padding keeps the dilated region intact past the image border, so the
    result always contains the input (closing is extensive).
    """
    k = _kernel(k)
    m = as_mask(mask)
    r = k.radius
    canvas = np.pad(m, r, mode="constant")
    closed = erode(dilate(canvas, k), k)
    return closed[r:r + m.shape[0], r:r + m.shape[1]]


def morph(mask, kind: str, k) -> np.ndarray:
    ops = {"dilate": dilate, "erode": erode, "close": close}
    if kind not in ops:
        raise ParameterError(f"unknown morphology kind {kind!r}")
    return ops[kind](mask, k)


# --------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentationSpec:
    max_rotation_deg: float = 3.0
    zoom_fraction: float = 0.05
    hflip_prob: float = 0.5
    contrast_fraction: float = 0.10

    def validate(self):
        if min(self.max_rotation_deg, self.zoom_fraction, self.contrast_fraction) < 0:
            raise ParameterError("augmentation magnitudes must be nonnegative")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ParameterError("hflip_prob must lie in [0, 1]")


@dataclass(frozen=True)
class Transform:
    rotation_deg: float = 0.0
    zoom: float = 1.0
    hflip: bool = False
    contrast: float = 1.0


def sample_transform(spec: AugmentationSpec, rng: np.random.Generator) -> Transform:
    spec.validate()
    # always draw four numbers so the stream advances identically per call
    u = rng.random(4)
    return Transform(
        rotation_deg=(2 * u[0] - 1) * spec.max_rotation_deg,
        zoom=1.0 + (2 * u[1] - 1) * spec.zoom_fraction,
        hflip=bool(u[2] < spec.hflip_prob),
        contrast=1.0 + (2 * u[3] - 1) * spec.contrast_fraction,
    )


def apply_transform(img, mask, t: Transform) -> tuple[np.ndarray, np.ndarray]:
    img = as_image(img)
    mask = as_mask(mask)
    if img.shape != mask.shape:
        raise ShapeError(f"image {img.shape} and mask {mask.shape} differ in shape")

    if t.rotation_deg != 0.0 or t.zoom != 1.0:
        theta = np.deg2rad(t.rotation_deg)
        # output->input map: rotate about the centre and scale by 1/zoom
        c, s = np.cos(theta), np.sin(theta)
        matrix = np.array([[c, -s], [s, c]]) / t.zoom
        centre = (np.array(img.shape) - 1) / 2.0
        offset = centre - matrix @ centre
        img = ndimage.affine_transform(img, matrix, offset=offset, order=1, mode="nearest")
        mask = ndimage.affine_transform(mask.astype(np.uint8), matrix, offset=offset,
                                        order=0, mode="constant", cval=0).astype(bool)
    if t.hflip:
        img = img[:, ::-1]
        mask = mask[:, ::-1]
    if t.contrast != 1.0:
        img = img * t.contrast
    return np.clip(img, 0.0, 1.0), mask.copy()


def augment(img, mask, spec: AugmentationSpec, rng: np.random.Generator):
    return apply_transform(img, mask, sample_transform(spec, rng))
