"""Compression surrogate: the lossy half of a baseline JPEG codec.

Reproduces where baseline JPEG loses information without writing any
bitstream: RGB to full-range YCbCr, optional 4:2:0 chroma subsampling,
8x8 block DCT, table quantization, and the inverse chain. Entropy coding
is lossless and therefore omitted; the reconstruction this returns is
what a real decoder would hand back.

Planes are processed in a 256-scale sample domain with a -128 level
shift (exactly -0.5 in [0, 1] units, so mid-gray has zero DC); images
are edge-padded to a multiple of the block size (16 when chroma is
subsampled) and cropped back afterwards.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidConfigError, InvalidInputError
from ..imaging import LUMA_WEIGHTS, _as_image
from . import blockdct
from .tables import QuantTables, scale_quant_tables

__all__ = [
    "SUBSAMPLING_MODES",
    "rgb_to_ycbcr",
    "ycbcr_to_rgb",
    "jpeg_roundtrip",
]

SUBSAMPLING_MODES = ("4:4:4", "4:2:0")

MIN_SIDE = 8


def rgb_to_ycbcr(img):
    """Split a (H, W, 3) RGB image in [0, 1] into full-range Y, Cb, Cr planes."""
    a = _as_image(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InvalidInputError(f"expected a 3-channel image, got shape {a.shape}")
    r, g, b = a[:, :, 0], a[:, :, 1], a[:, :, 2]
    wr, wg, wb = LUMA_WEIGHTS
    y = wr * r + wg * g + wb * b
    cb = (b - y) / 1.772 + 0.5
    cr = (r - y) / 1.402 + 0.5
    return y, cb, cr


def ycbcr_to_rgb(y, cb, cr):
    """Inverse of :func:`rgb_to_ycbcr`; output is not clipped."""
    r = y + 1.402 * (cr - 0.5)
    b = y + 1.772 * (cb - 0.5)
    g = (y - LUMA_WEIGHTS[0] * r - LUMA_WEIGHTS[2] * b) / LUMA_WEIGHTS[1]
    return np.stack([r, g, b], axis=2)


def _pad_to_multiple(plane: np.ndarray, mult: int) -> np.ndarray:
    h, w = plane.shape
    ph = (-h) % mult
    pw = (-w) % mult
    if ph == 0 and pw == 0:
        return plane
    return np.pad(plane, ((0, ph), (0, pw)), mode="edge")


def _box_down2(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _nearest_up2(plane: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)


def jpeg_roundtrip(
    img, qf: int = 80, subsampling: str = "4:4:4", clip: bool = True
) -> np.ndarray:
    """Compress and reconstruct one RGB image through the surrogate codec.

    The input must be at least 8x8 with 3 channels; the output has the
    same shape, clipped to [0, 1] unless ``clip`` is disabled (the raw
    reconstruction is what oracle comparisons measure against).
    """
    a = _as_image(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InvalidInputError(f"expected a 3-channel image, got shape {a.shape}")
    if a.shape[0] < MIN_SIDE or a.shape[1] < MIN_SIDE:
        raise InvalidInputError(
            f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {a.shape[:2]}"
        )
    if subsampling not in SUBSAMPLING_MODES:
        raise InvalidConfigError(
            f"subsampling must be one of {SUBSAMPLING_MODES}, got {subsampling!r}"
        )
    tables: QuantTables = scale_quant_tables(qf)
    h, w = a.shape[:2]

    ## Level-shifted sample planes, padded so every block is complete.
    mult = 16 if subsampling == "4:2:0" else 8
    y, cb, cr = rgb_to_ycbcr(a)
    y = _pad_to_multiple(y, mult) * 256.0 - 128.0
    cb = _pad_to_multiple(cb, mult) * 256.0 - 128.0
    cr = _pad_to_multiple(cr, mult) * 256.0 - 128.0

    y = blockdct.roundtrip_plane(y, tables.luma)
    if subsampling == "4:2:0":
        cb = _nearest_up2(blockdct.roundtrip_plane(_box_down2(cb), tables.chroma))
        cr = _nearest_up2(blockdct.roundtrip_plane(_box_down2(cr), tables.chroma))
    else:
        cb = blockdct.roundtrip_plane(cb, tables.chroma)
        cr = blockdct.roundtrip_plane(cr, tables.chroma)

    y = (y[:h, :w] + 128.0) / 256.0
    cb = (cb[:h, :w] + 128.0) / 256.0
    cr = (cr[:h, :w] + 128.0) / 256.0
    out = ycbcr_to_rgb(y, cb, cr)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out
