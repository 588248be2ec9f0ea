"""Build hook for the optional compiled kernel.

The package works without the extension (a NumPy fallback is selected at
import time); the extension is what makes worker threads scale, so we try
hard to build it but do not fail the install when no compiler is around.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "voxcut.kernels._fast",
                ["src/voxcut/kernels/_fast.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
