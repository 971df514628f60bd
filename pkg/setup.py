"""Builds the optional Cython kernel extension.

The package works without it: depthfuse.kernels falls back to the numpy
implementation when the compiled module is missing.
"""

import numpy
from setuptools import setup
from Cython.Build import cythonize

setup(
    ext_modules=cythonize(
        ["src/depthfuse/kernels/_cython_impl.pyx"],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    ),
    include_dirs=[numpy.get_include()],
)
