"""Build script for the optional compiled GRU kernel.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed, not functionality.
"""

import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = cythonize(
    [
        Extension(
            "dtain.kernels._gru_cy",
            ["src/dtain/kernels/_gru_cy.pyx"],
            include_dirs=[numpy.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ],
    language_level=3,
)

setup(ext_modules=extensions)
