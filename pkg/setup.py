"""Build script: compiles the optional solve-apply kernel.

The package is fully functional without the extension; a numpy fallback is
selected at import time, so a failed compile only costs apply speed.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("NDLU_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "ndlu._kernels",
                    ["src/ndlu/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except Exception as exc:  # pragma: no cover - build-env dependent
        print(f"ndlu: skipping compiled kernel ({exc}); numpy fallback will be used")
        ext_modules = []

setup(ext_modules=ext_modules)
