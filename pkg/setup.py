import os

import numpy
from setuptools import Extension, setup

# The compiled sweep kernel is optional: the package falls back to the
# numpy implementation when the extension is absent or fails to build.
# SPIKEGIBBS_NO_EXT=1 skips compilation entirely.

ext_modules = []
if not os.environ.get("SPIKEGIBBS_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "spikegibbs._kernels._sweep",
                    ["src/spikegibbs/_kernels/_sweep.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "language_level": 3,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
