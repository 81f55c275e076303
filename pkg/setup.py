import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "cyclab._kernels._core",
    ["src/cyclab/_kernels/_core.pyx"],
    include_dirs=[numpy.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], compiler_directives={"language_level": "3"}))
