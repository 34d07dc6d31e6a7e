"""Build script for the optional compiled sampler kernels.

The package is fully functional without the extension: a pure Python
implementation of the same kernels is selected at import time whenever
the compiled module is missing.  Any failure while building the
extension therefore downgrades to a warning instead of aborting the
install.  Set ROUTEFLOW_PURE=1 to skip the extension build entirely.
"""

import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Try to build the extension; warn and continue on failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        sys.stderr.write(
            "warning: could not build the compiled sampler kernels (%s); "
            "the pure Python fallback will be used\n" % (exc,)
        )


def extensions():
    if os.environ.get("ROUTEFLOW_PURE") == "1":
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        sys.stderr.write(
            "warning: %s; building without compiled kernels\n" % (exc,)
        )
        return []
    ext = Extension(
        "routeflow._kernels",
        ["src/routeflow/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
