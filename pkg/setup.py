import os

from setuptools import setup

ext_modules = []
if not os.environ.get("SECURE_HFL_PURE_PYTHON"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "secure_hfl._kernels",
                    ["src/secure_hfl/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # pure-Python install; secure_hfl.kernels falls back to numpy
        ext_modules = []

setup(ext_modules=ext_modules)
