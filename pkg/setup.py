"""Build script: compiles the optional speedup extension.

The package works without the extension (a pure-Python twin is selected at
import time), so a failed or skipped compile must not break installation.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "agorasim._speedups",
                ["src/agorasim/_speedups.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
