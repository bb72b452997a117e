import warnings

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "facsep._kernels._native",
                ["src/facsep/_kernels/_native.pyx"],
            )
        ],
        language_level="3",
    )
except ImportError:
    warnings.warn(
        "Cython not available; installing without the native kernels "
        "(the pure-numpy fallback will be used)."
    )
    ext_modules = []

setup(ext_modules=ext_modules)
