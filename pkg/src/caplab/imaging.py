"""Core image representations, brightness maps, and quality metrics.

Images travel through the package as numpy float64 arrays in [0, 1],
shaped (H, W, C) with C in {1, 3}, or (H, W) for grayscale maps. The
functions here are the numerical ground floor everything else builds on:
color-to-luminance conversion, the normalized brightness map and its
binary threshold, and the three full-reference metrics (PSNR, SSIM,
Charbonnier).

Metric conventions: inputs are clamped to [0, 1] before measuring, PSNR
uses peak 1.0 and is capped at 100 dB, SSIM uses an 11x11 Gaussian
window (sigma 1.5) over the luminance with no border padding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage
from scipy.ndimage import correlate1d as _correlate1d

from .errors import InvalidInputError

__all__ = [
    "LUMA_WEIGHTS",
    "PSNR_CAP_DB",
    "MetricRecord",
    "to_grayscale",
    "brightness_map",
    "threshold_mask",
    "psnr",
    "ssim",
    "charbonnier",
    "load_image",
    "save_image",
]

## BT.601 luma weights, also used by the brightness map the network consumes.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

PSNR_CAP_DB = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

## Default threshold for binarizing brightness maps: pixels at or above
## 1e-3 of the frame maximum count as "lit".
DEFAULT_TAU = 1e-3


@dataclass
class MetricRecord:
    """Bundle of the three metrics for one image pair."""

    psnr: float
    ssim: float
    charbonnier: float


def _as_image(arr, name: str = "image") -> np.ndarray:
    """Validate and coerce input to a float64 (H, W, C) or (H, W) array."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        pass
    elif a.ndim == 3:
        if a.shape[2] not in (1, 3):
            raise InvalidInputError(
                f"{name} must have 1 or 3 channels, got {a.shape[2]}"
            )
    else:
        raise InvalidInputError(
            f"{name} must be 2-D or 3-D, got shape {a.shape}"
        )
    if a.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return a


def _pair(a, b):
    x = _as_image(a, "first image")
    y = _as_image(b, "second image")
    if x.shape != y.shape:
        raise InvalidInputError(
            f"image shapes differ: {x.shape} vs {y.shape}"
        )
    return x, y


def to_grayscale(img) -> np.ndarray:
    """Collapse an image to a single luminance plane.

    Three-channel input is combined with the BT.601 weights; single-channel
    and 2-D input pass through unchanged (as a 2-D array).
    """
    a = _as_image(img)
    if a.ndim == 2:
        return a.copy()
    if a.shape[2] == 1:
        return a[:, :, 0].copy()
    w = LUMA_WEIGHTS
    return w[0] * a[:, :, 0] + w[1] * a[:, :, 1] + w[2] * a[:, :, 2]


def brightness_map(img) -> np.ndarray:
    """Luminance normalized by its own frame maximum, in [0, 1].

    An all-black frame has no meaningful normalization; it degenerates to
    an all-ones map, which downstream masking treats as "everything lit"
    rather than "everything masked".
    """
    g = to_grayscale(img)
    peak = float(g.max())
    if peak <= 0.0:
        return np.ones_like(g)
    return g / peak


def threshold_mask(bmap, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Binarize a brightness map: 0 below ``tau``, 1 at or above it."""
    b = _as_image(bmap, "brightness map")
    if b.ndim != 2:
        raise InvalidInputError("brightness map must be 2-D")
    if not (0.0 <= tau <= 1.0):
        raise InvalidInputError(f"tau must be in [0, 1], got {tau}")
    return (b >= tau).astype(np.float64)


def _clamp01(a: np.ndarray) -> np.ndarray:
    return np.clip(a, 0.0, 1.0)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0, capped at 100 dB.

    Identical images report exactly 100.0 rather than infinity.
    """
    x, y = _pair(a, b)
    d = _clamp01(x) - _clamp01(y)
    mse = float(np.mean(d * d))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable correlation keeping only fully-covered output positions."""
    r = kernel.size // 2
    out = _correlate1d(plane, kernel, axis=0, mode="constant")
    out = _correlate1d(out, kernel, axis=1, mode="constant")
    ## Cropping by the radius removes every position the padding touched.
    return out[r:-r, r:-r]


def ssim(a, b) -> float:
    """Mean structural similarity over the luminance plane.

    11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic
    range 1.0. Only windows fully inside the image are scored, so both
    images must be at least 11 pixels on each side.
    """
    x, y = _pair(a, b)
    gx = to_grayscale(_clamp01(x))
    gy = to_grayscale(_clamp01(y))
    if min(gx.shape) < SSIM_WINDOW:
        raise InvalidInputError(
            f"ssim needs images at least {SSIM_WINDOW}px on each side, "
            f"got {gx.shape}"
        )
    k = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(gx, k)
    mu_y = _filter_valid(gy, k)
    xx = _filter_valid(gx * gx, k) - mu_x * mu_x
    yy = _filter_valid(gy * gy, k) - mu_y * mu_y
    xy = _filter_valid(gx * gy, k) - mu_x * mu_y
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def charbonnier(a, b, eps: float = 1e-3) -> float:
    """Mean Charbonnier distance sqrt(diff^2 + eps^2), a smooth L1.

    For identical inputs this returns ``eps`` exactly: every element of
    the summand is then sqrt(eps^2), and the reduction below uses an
    exactly-rounded sum (math.fsum) so the mean does not pick up the
    stray ulps a blocked numpy reduction would.
    """
    x, y = _pair(a, b)
    if eps < 0.0:
        raise InvalidInputError(f"eps must be >= 0, got {eps}")
    d = x - y
    vals = np.sqrt(d * d + eps * eps)
    return math.fsum(vals.ravel()) / vals.size


def load_image(path) -> np.ndarray:
    """Read a PNG (or other Pillow-readable) file to a float64 array.

    RGB-like files come back as (H, W, 3); grayscale files as (H, W).
    Values are scaled from 8-bit to [0, 1].
    """
    try:
        with _PILImage.open(path) as im:
            if im.mode in ("L", "I;16", "I"):
                im = im.convert("L")
                arr = np.asarray(im, dtype=np.float64)
            else:
                im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64)
    except Exception as exc:
        from .errors import IngestionError

        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def save_image(path, img) -> None:
    """Write an image to disk as 8-bit PNG.

    Values are clamped to [0, 1] and quantized with round-half-up, so a
    pixel at exactly 0.5/255 lands on 1, not 0.
    """
    a = _as_image(img)
    q = np.floor(_clamp01(a) * 255.0 + 0.5).astype(np.uint8)
    if q.ndim == 3 and q.shape[2] == 1:
        q = q[:, :, 0]
    mode = "L" if q.ndim == 2 else "RGB"
    _PILImage.fromarray(q, mode=mode).save(path)
