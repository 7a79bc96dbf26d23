"""Builds the optional compiled RK4 kernels; the package works without them."""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("SLOWFAST_NO_EXT", "") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("slowfast._kernels._rk4core", ["src/slowfast/_kernels/_rk4core.pyx"],
                       include_dirs=[numpy.get_include()], extra_compile_args=["-O3"],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
