"""Backend selection for the 8x8 block transform kernels.

Prefers the compiled Cython extension and falls back to the pure-numpy
implementation when the extension was not built. Setting the environment
variable ``CAPLAB_FORCE_NUMPY=1`` before import forces the fallback,
which the benchmark and the equivalence tests use.
"""

from __future__ import annotations

import os

from . import _blockdct_np

if os.environ.get("CAPLAB_FORCE_NUMPY", "") == "1":
    _impl = _blockdct_np
else:
    try:
        from . import _blockdct as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _blockdct_np

BACKEND: str = _impl.BACKEND_NAME
BLOCK: int = _impl.BLOCK

dct_basis = _impl.dct_basis
dct_plane = _impl.dct_plane
idct_plane = _impl.idct_plane
quantize_coeffs = _impl.quantize_coeffs
roundtrip_plane = _impl.roundtrip_plane

__all__ = [
    "BACKEND",
    "BLOCK",
    "dct_basis",
    "dct_plane",
    "idct_plane",
    "quantize_coeffs",
    "roundtrip_plane",
]
