"""Build script for the optional compiled kernels.

The package works without them: ``approxcal.kernels`` falls back to numpy
when ``approxcal._kernels`` cannot be imported.
"""

import warnings

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    warnings.warn("Cython or numpy not available; building without compiled kernels")
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "approxcal._kernels",
                ["src/approxcal/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # keep a*b+c as two roundings so results match numpy exactly
                extra_compile_args=["-O2", "-ffp-contract=off"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
