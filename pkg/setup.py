"""Builds the optional compiled matching core.

python setup.py build_ext --inplace
The package works without it (pure-NumPy fallback is selected at import).
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("REGIONVPR_SKIP_EXT") != "1":
    from Cython.Build import cythonize
    import numpy as np

    ext = Extension(
        "regionvpr._kernels._matchcore",
        ["src/regionvpr/_kernels/_matchcore.pyx", "src/regionvpr/_kernels/argmax_pass.c"],
        include_dirs=[np.get_include(), "src/regionvpr/_kernels"],
        extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
