# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 8x8 block transform kernels.

Same contract as ``_blockdct_np``: float64 planes with dimensions that
are multiples of 8, orthonormal DCT-II per block, quantization rounding
half away from zero. The roundtrip entry point fuses DCT, quantization,
and inverse DCT into one pass per block.
"""

from libc.math cimport cos, fabs, floor, sqrt

import numpy as np

from . import _blockdct_np as _ref

BLOCK = 8
BACKEND_NAME = "cython"

cdef double _C[8][8]


cdef void _init_basis() noexcept:
    cdef int k, n
    cdef double pi = 3.141592653589793
    for k in range(8):
        for n in range(8):
            _C[k][n] = cos((2.0 * n + 1.0) * k * pi / 16.0) * sqrt(2.0 / 8.0)
    for n in range(8):
        _C[0][n] = sqrt(1.0 / 8.0)


_init_basis()


def dct_basis():
    """Orthonormal DCT-II basis matrix as used by this backend."""
    out = np.empty((8, 8), dtype=np.float64)
    cdef double[:, ::1] vw = out
    cdef int i, j
    for i in range(8):
        for j in range(8):
            vw[i, j] = _C[i][j]
    return out


cdef void _dct8(double src[8][8], double dst[8][8], bint inverse) noexcept nogil:
    cdef double t[8][8]
    cdef int i, j, k
    cdef double acc
    for i in range(8):
        for j in range(8):
            acc = 0.0
            for k in range(8):
                if inverse:
                    acc += _C[k][i] * src[k][j]
                else:
                    acc += _C[i][k] * src[k][j]
            t[i][j] = acc
    for i in range(8):
        for j in range(8):
            acc = 0.0
            for k in range(8):
                if inverse:
                    acc += t[i][k] * _C[k][j]
                else:
                    acc += t[i][k] * _C[j][k]
            dst[i][j] = acc


cdef void _load(double[:, ::1] plane, double blk[8][8], Py_ssize_t by, Py_ssize_t bx) noexcept nogil:
    cdef int i, j
    for i in range(8):
        for j in range(8):
            blk[i][j] = plane[by + i, bx + j]


cdef void _store(double[:, ::1] plane, double blk[8][8], Py_ssize_t by, Py_ssize_t bx) noexcept nogil:
    cdef int i, j
    for i in range(8):
        for j in range(8):
            plane[by + i, bx + j] = blk[i][j]


cdef void _quant8(double blk[8][8], double[:, ::1] q) noexcept nogil:
    cdef int i, j
    cdef double c, lvl
    for i in range(8):
        for j in range(8):
            c = blk[i][j]
            lvl = floor(fabs(c) / q[i, j] + 0.5)
            blk[i][j] = (lvl if c >= 0.0 else -lvl) * q[i, j]


def dct_plane(plane):
    """Forward orthonormal DCT-II on every 8x8 block of a plane."""
    p = _ref._check_plane(plane)
    out = np.empty_like(p)
    cdef double[:, ::1] src = p
    cdef double[:, ::1] dst = out
    cdef double blk[8][8]
    cdef double res[8][8]
    cdef Py_ssize_t by, bx
    with nogil:
        for by in range(0, src.shape[0], 8):
            for bx in range(0, src.shape[1], 8):
                _load(src, blk, by, bx)
                _dct8(blk, res, False)
                _store(dst, res, by, bx)
    return out


def idct_plane(coeffs):
    """Inverse of :func:`dct_plane`."""
    p = _ref._check_plane(coeffs)
    out = np.empty_like(p)
    cdef double[:, ::1] src = p
    cdef double[:, ::1] dst = out
    cdef double blk[8][8]
    cdef double res[8][8]
    cdef Py_ssize_t by, bx
    with nogil:
        for by in range(0, src.shape[0], 8):
            for bx in range(0, src.shape[1], 8):
                _load(src, blk, by, bx)
                _dct8(blk, res, True)
                _store(dst, res, by, bx)
    return out


def quantize_coeffs(coeffs, qtable):
    """Quantize and immediately dequantize coefficients against an 8x8 table."""
    p = _ref._check_plane(coeffs)
    qt = np.ascontiguousarray(qtable, dtype=np.float64)
    if qt.shape != (8, 8):
        raise _ref.InternalConsistencyError(f"qtable shape {qt.shape} != (8, 8)")
    out = np.empty_like(p)
    cdef double[:, ::1] src = p
    cdef double[:, ::1] dst = out
    cdef double[:, ::1] q = qt
    cdef double blk[8][8]
    cdef Py_ssize_t by, bx
    with nogil:
        for by in range(0, src.shape[0], 8):
            for bx in range(0, src.shape[1], 8):
                _load(src, blk, by, bx)
                _quant8(blk, q)
                _store(dst, blk, by, bx)
    return out


def roundtrip_plane(plane, qtable):
    """DCT, quantize/dequantize, and inverse DCT one plane in a single pass."""
    p = _ref._check_plane(plane)
    qt = np.ascontiguousarray(qtable, dtype=np.float64)
    if qt.shape != (8, 8):
        raise _ref.InternalConsistencyError(f"qtable shape {qt.shape} != (8, 8)")
    out = np.empty_like(p)
    cdef double[:, ::1] src = p
    cdef double[:, ::1] dst = out
    cdef double[:, ::1] q = qt
    cdef double blk[8][8]
    cdef double res[8][8]
    cdef Py_ssize_t by, bx
    with nogil:
        for by in range(0, src.shape[0], 8):
            for bx in range(0, src.shape[1], 8):
                _load(src, blk, by, bx)
                _dct8(blk, res, False)
                _quant8(res, q)
                _dct8(res, blk, True)
                _store(dst, blk, by, bx)
    return out
