from setuptools import setup

# The compiled kernel core is optional: without Cython (or a C compiler)
# the package falls back to the pure-Python kernels at import time.
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "blockrt.kern._kernels",
                ["src/blockrt/kern/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                # -ffp-contract=off: kernels must match the pure-Python
                # float semantics bit for bit (no FMA contraction).
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
