"""Builds the optional compiled kernels; the package works without them."""
import logging

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # no compiler or Cython: numpy loops take over
            logging.warning("skipping compiled kernels: %s", exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            logging.warning("skipping %s: %s", ext.name, exc)


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "sphnet.tp._kernels",
        ["src/sphnet/tp/_kernels.pyx"],
        extra_compile_args=["-O3"],
    )
    try:
        return cythonize([ext], language_level=3)
    except Exception as exc:
        logging.warning("cannot cythonize kernels: %s", exc)
        return []


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
