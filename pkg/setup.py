from setuptools import Extension, setup

import numpy

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "guided_decode.kernels._core",
                sources=["src/guided_decode/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # -ffast-math lets gcc vectorize the exp() loops via libmvec;
                # inputs are validated finite and stay in normal float range,
                # and the backend-equivalence tests pin the numerics
                extra_compile_args=["-O3", "-ffast-math", "-funroll-loops", "-march=native"],
                libraries=["mvec", "m"],
                # The package falls back to the numpy kernels when the
                # compiled module is unavailable, so a failed build must
                # not fail the install.
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
