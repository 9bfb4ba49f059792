"""Build script: compiles the optional Cython kernel for the recurrent hot loop.

If Cython or a C compiler is unavailable the install still succeeds and the
package falls back to the pure-numpy kernels at import time.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "cfmimo._kernels._fast",
                ["src/cfmimo/_kernels/_fast.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"cfmimo: skipping compiled kernel ({exc}); pure-python fallback will be used")

setup(ext_modules=ext_modules)
