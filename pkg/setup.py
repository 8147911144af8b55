"""Build script: compiles the optional segment-op kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so the build is marked optional and a failed compile only
emits a warning.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "infomax3d.kernels._ckernels",
        ["src/infomax3d/kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext.optional = True
    ext_modules = cythonize(ext, compiler_directives={"language_level": "3"})
except ImportError:
    pass

setup(ext_modules=ext_modules)
