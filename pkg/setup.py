import os

import numpy as np
from setuptools import Extension, setup

# Pure-Python fallback covers everything; skip the extension if Cython is absent
# or DIALOGSENT_NO_EXT is set.
ext_modules = []
if not os.environ.get("DIALOGSENT_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "dialogsent._kernels._fast",
                    ["src/dialogsent/_kernels/_fast.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
