"""Build script for the optional compiled block-transform core.

The package is pure Python except for one hot loop: the 8x8 block
DCT / quantize / IDCT kernel used by the JPEG surrogate. If Cython or a
C compiler is unavailable the extension is skipped and the package falls
back to the numpy implementation at import time.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "caplab.jpeg._blockdct",
                ["src/caplab/jpeg/_blockdct.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
