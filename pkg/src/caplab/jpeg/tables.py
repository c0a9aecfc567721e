"""Baseline JPEG quantization tables and quality-factor scaling.

The two 8x8 base tables are the standard baseline luma/chroma tables;
scaling follows the common libjpeg convention: quality factors below 50
use scale = 5000 // qf (integer division), 50 and above use
200 - 2 * qf, and each scaled entry is clamped to [1, 255]. qf = 50
reproduces the base tables exactly and qf = 100 gives all-ones tables
(lossless up to rounding).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidConfigError

__all__ = ["BASE_LUMA", "BASE_CHROMA", "QuantTables", "scale_quant_tables"]

BASE_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.int64,
)

BASE_CHROMA = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class QuantTables:
    """Scaled luma and chroma quantization tables for one quality factor."""

    qf: int
    luma: np.ndarray
    chroma: np.ndarray


def _scale_one(base: np.ndarray, qf: int) -> np.ndarray:
    if qf < 50:
        scale = 5000 // qf
    else:
        scale = 200 - 2 * qf
    scaled = (base * scale + 50) // 100
    return np.clip(scaled, 1, 255).astype(np.int64)


def scale_quant_tables(qf: int) -> QuantTables:
    """Build the luma/chroma tables for an integer quality factor in [1, 100]."""
    if not isinstance(qf, (int, np.integer)) or isinstance(qf, bool):
        raise InvalidConfigError(f"quality factor must be an integer, got {qf!r}")
    if not 1 <= qf <= 100:
        raise InvalidConfigError(f"quality factor must be in [1, 100], got {qf}")
    return QuantTables(
        qf=int(qf),
        luma=_scale_one(BASE_LUMA, int(qf)),
        chroma=_scale_one(BASE_CHROMA, int(qf)),
    )
