"""Build script for the optional compiled nearest-neighbor kernel.

The package works without the extension: sctrack.kernels falls back to a
NumPy implementation when the compiled module is missing.
"""
from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "sctrack.kernels._native",
                ["src/sctrack/kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
