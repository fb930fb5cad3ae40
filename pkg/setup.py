"""Build script for the compiled similarity kernels.

The extension is optional: when Cython or a C compiler is unavailable the
package falls back to the numpy implementation in objseek._kernels.pure.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-python install still works
    cythonize = None

extensions = [
    Extension(
        name="objseek._kernels._fast",
        sources=["src/objseek/_kernels/_fast.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(extensions, language_level="3") if cythonize else [])
