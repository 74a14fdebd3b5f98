"""Build script: compiles the optional kernel extension when possible.

The package is fully functional without the extension (the NumPy backend is
selected at import); any failure to build it is therefore non-fatal.
"""

import sys

from setuptools import setup


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError as exc:
        print(f"skipping compiled backend (missing build dependency: {exc})", file=sys.stderr)
        return []
    return cythonize(
        [
            Extension(
                "lhpo.backend._core",
                ["src/lhpo/backend/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=_extensions())
