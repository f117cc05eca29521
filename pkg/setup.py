"""Build shim for the optional compiled kernel core.

The package is pure Python plus one Cython extension holding the per-event
and per-pixel hot loops.  If Cython (or a C compiler) is unavailable, or
EVENTVIT_SKIP_EXT is set, the build proceeds without the extension and the
package falls back to the NumPy kernels at import time.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("EVENTVIT_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "eventvit._kernels_native",
                    ["src/eventvit/_kernels_native.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
