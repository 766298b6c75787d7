"""Evolving domain generalization by directional domain augmentation."""

from edg.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
