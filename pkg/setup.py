import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

# The compiled patch gather/scatter is optional: rotequiv._backend falls back
# to the numpy implementation when the extension is absent.
ext = Extension(
    "rotequiv._backend.native",
    ["src/rotequiv/_backend/native.pyx"],
    include_dirs=[numpy.get_include()],
    extra_compile_args=["-O3"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)
ext.optional = True

setup(ext_modules=cythonize([ext], language_level=3))
