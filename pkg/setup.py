import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# BINATTN_NO_EXT=1 builds a pure-Python install that uses the numpy fallback.
if os.environ.get("BINATTN_NO_EXT"):
    ext_modules = []
else:
    extensions = [
        Extension(
            "binattn._kernels",
            ["src/binattn/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3", "-mpopcnt", "-fopenmp"],
            extra_link_args=["-fopenmp"],
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
    )

setup(ext_modules=ext_modules)
