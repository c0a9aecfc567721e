"""Pure-numpy 8x8 block transform kernels.

This is the fallback backend behind ``caplab.jpeg.blockdct``; the Cython
extension implements the same three functions with identical semantics.
Planes are float64, shaped (H, W) with H and W multiples of 8, in the
level-shifted sample domain (nominally [-128, 127]). Quantization rounds
half away from zero: sign(c) * floor(|c| / q + 0.5) * q.
"""

from __future__ import annotations

import numpy as np

from ..errors import InternalConsistencyError

BLOCK = 8

BACKEND_NAME = "numpy"


def dct_basis() -> np.ndarray:
    """Orthonormal DCT-II basis matrix C, rows indexed by frequency.

    C[k, n] = sqrt((1 if k == 0 else 2) / 8) * cos((2n + 1) k pi / 16),
    so a block transforms as F = C @ B @ C.T and back as B = C.T @ F @ C.
    """
    k = np.arange(BLOCK, dtype=np.float64)[:, None]
    n = np.arange(BLOCK, dtype=np.float64)[None, :]
    c = np.cos((2.0 * n + 1.0) * k * np.pi / (2.0 * BLOCK))
    c *= np.sqrt(2.0 / BLOCK)
    c[0, :] = np.sqrt(1.0 / BLOCK)
    return c


_C = dct_basis()


def _check_plane(plane: np.ndarray) -> np.ndarray:
    p = np.ascontiguousarray(plane, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] % BLOCK or p.shape[1] % BLOCK:
        raise InternalConsistencyError(
            f"plane shape {plane.shape} is not a multiple of {BLOCK}x{BLOCK}"
        )
    return p


def _to_blocks(p: np.ndarray) -> np.ndarray:
    h, w = p.shape
    return p.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _from_blocks(b: np.ndarray, h: int, w: int) -> np.ndarray:
    return b.transpose(0, 2, 1, 3).reshape(h, w)


def dct_plane(plane: np.ndarray) -> np.ndarray:
    """Forward orthonormal DCT-II on every 8x8 block of a plane."""
    p = _check_plane(plane)
    b = _to_blocks(p)
    f = np.einsum("ij,xyjk,lk->xyil", _C, b, _C, optimize=True)
    return _from_blocks(f, *p.shape)


def idct_plane(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct_plane`."""
    f = _check_plane(coeffs)
    b = np.einsum("ji,xyjk,kl->xyil", _C, _to_blocks(f), _C, optimize=True)
    return _from_blocks(b, *f.shape)


def quantize_coeffs(coeffs: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """Quantize and immediately dequantize coefficients against an 8x8 table."""
    f = _check_plane(coeffs)
    q = np.asarray(qtable, dtype=np.float64)
    if q.shape != (BLOCK, BLOCK):
        raise InternalConsistencyError(f"qtable shape {q.shape} != (8, 8)")
    b = _to_blocks(f)
    levels = np.sign(b) * np.floor(np.abs(b) / q + 0.5)
    return _from_blocks(levels * q, *f.shape)


def roundtrip_plane(plane: np.ndarray, qtable: np.ndarray) -> np.ndarray:
    """DCT, quantize/dequantize, and inverse DCT one plane."""
    return idct_plane(quantize_coeffs(dct_plane(plane), qtable))
