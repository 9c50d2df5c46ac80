"""Decompose an AV system-level risk acceptance criterion into
quantitative perception requirements."""

from .kernels import BACKEND

__version__ = "0.1.0"

KMH = 1.0 / 3.6
"""Multiply a km/h value by this to get m/s."""

G = 9.81

__all__ = ["BACKEND", "KMH", "G", "__version__"]
