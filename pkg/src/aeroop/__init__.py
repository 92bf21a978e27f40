"""Neural-operator surrogates (FNO and fractional-Fourier CoNO) for gridded air-quality forecasting."""

from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
