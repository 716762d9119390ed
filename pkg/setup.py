"""Build script: compiles the collision-map kernel extension.

The package works without the extension (a pure numpy fallback is selected at
import time), so a failed compile degrades to a slow-but-correct install
instead of breaking it.
"""

import os
import sys

from setuptools import Extension, setup

USE_OPENMP = os.environ.get("LORENTZMIX_NO_OPENMP", "") != "1"

compile_args = ["-O3"]
link_args = []
if USE_OPENMP and sys.platform.startswith("linux"):
    compile_args.append("-fopenmp")
    link_args.append("-fopenmp")

extensions = [
    Extension(
        "lorentzmix._kernels._core",
        ["src/lorentzmix/_kernels/_core.pyx"],
        extra_compile_args=compile_args,
        extra_link_args=link_args,
    )
]

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
