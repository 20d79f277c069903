"""Build script: compiles the optional fast kernel extension when Cython is
available.  Set MDILM_NO_EXT=1 to force a pure-Python install."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("MDILM_NO_EXT") != "1":
    try:
        from setuptools import Extension
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("mdilm._kernels._fast", ["src/mdilm/_kernels/_fast.pyx"])],
            compiler_directives={"language_level": "3", "boundscheck": False,
                                 "wraparound": False, "cdivision": True},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
