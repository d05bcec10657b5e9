"""Build script: compiles the optional Cython convolution kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed extension build only costs speed, not features.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "foley_forge._kernels._convcy",
                ["src/foley_forge/_kernels/_convcy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-march=native", "-fno-math-errno",
                                    "-fopenmp"],
                extra_link_args=["-fopenmp"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
