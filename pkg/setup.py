from setuptools import Extension, setup
from Cython.Build import cythonize

ext = Extension("i2plive._dtwcore", ["src/i2plive/_dtwcore.pyx"])

setup(ext_modules=cythonize(ext, language_level="3"))
