"""Unpaired image-to-image translation with a Sobel gradient adjustment loss."""
from ._backend import BACKEND
from .autodiff import GradientTape, Tensor, backward
from .losses import LossReport, LossWeights

__version__ = "0.1.0"

__all__ = ["BACKEND", "GradientTape", "LossReport", "LossWeights", "Tensor", "backward"]
