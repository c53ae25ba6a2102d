"""Deterministic geometry, spatial priors, and evaluation statistics for
cephalometric landmarking."""

from ._kernels import KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
