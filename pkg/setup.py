"""Build the optional compiled kernels; the package works without them."""
from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    setup()
else:
    extensions = [
        Extension(
            "spectrumchain._kernels",
            ["src/spectrumchain/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3"],
        )
    ]
    setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
