import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# -march=native lets gcc call the vector exp from libmvec in the logistic
# loop; set GII_PORTABLE_BUILD=1 to build a binary that runs on any x86-64.
flags = ["-O3", "-fno-math-errno", "-ffinite-math-only", "-fno-trapping-math",
         "-fno-signed-zeros", "-fassociative-math", "-funsafe-math-optimizations",
         "-funroll-loops", "-fvariable-expansion-in-unroller"]
if os.environ.get("GII_PORTABLE_BUILD", "") in ("", "0"):
    flags.append("-march=native")

extensions = [
    Extension(
        "gii._ckernels",
        ["src/gii/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=flags,
        libraries=["mvec", "m"],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
