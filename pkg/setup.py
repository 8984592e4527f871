"""Build script: compiles the hot-kernel extension when Cython is available.

The package works without the extension (a NumPy fallback is selected at
import time), so a missing Cython just produces a pure-Python install.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    extensions = []
else:
    extensions = cythonize(
        [
            Extension(
                "dhsa._core",
                ["src/dhsa/_core.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions)
