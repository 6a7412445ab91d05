import os

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    USE_CYTHON = os.environ.get("DRCME_NO_EXT", "") == ""
except ImportError:
    USE_CYTHON = False

ext_modules = []
if USE_CYTHON:
    ext_modules = cythonize(
        [
            Extension(
                "drcme._core",
                ["src/drcme/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
