"""Build script: compiles the optional transform kernel extension.

The package is fully functional without the extension (a vectorized numpy
fallback is selected at import time), so any failure to build it is
non-fatal for source installs where Cython or a C compiler is missing.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "privseq._kernels",
                ["src/privseq/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                # Forbid FMA contraction so the compiled butterfly arithmetic
                # is bit-identical to the numpy fallback's element ops.
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level="3",
    )
except Exception:
    ext_modules = []

setup(ext_modules=ext_modules)
