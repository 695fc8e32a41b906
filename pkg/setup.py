"""Builds the optional compiled simulation kernel.

The package works without it: ``podsim.ctmc`` falls back to the pure-Python
loop when ``podsim._kernel`` cannot be imported.
"""
from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "podsim._kernel",
                ["src/podsim/_kernel.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
