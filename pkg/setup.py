"""Build the optional compiled kernels; the package falls back to numpy without them."""
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install
    cythonize = None



def _arch_flags():
    # TRANSKGE_MARCH="" disables host-specific tuning for portable builds
    march = os.environ.get("TRANSKGE_MARCH", "native")
    return [f"-march={march}"] if march else []


ext_modules = []
if cythonize is not None and not os.environ.get("TRANSKGE_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "transkge._kernels",
                ["src/transkge/_kernels.pyx"],
                include_dirs=[np.get_include(), "src/transkge"],
                depends=["src/transkge/kernel_core.h"],
                # contraction into FMA would break bitwise parity with numpy
                extra_compile_args=["-O3", "-ffp-contract=off", *_arch_flags()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
