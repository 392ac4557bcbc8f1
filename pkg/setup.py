"""Build script: compiles the Cython tape evaluator when Cython is available.

The extension is optional -- without it the package falls back to the pure
Python evaluator in ``arks._tape_py``.  Set ARKS_SKIP_EXT=1 to skip the
compiled core on purpose.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("ARKS_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("arks._tape_cy", ["src/arks/_tape_cy.pyx"])],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
