"""Minimal CPU-only neural machine translation in numpy."""
from .tensor import Parameter, RngState, Tensor, backward, check_gradients, no_grad
from .vocab import Vocabulary, build_vocabulary

__version__ = "0.1.0"

__all__ = ["Parameter", "RngState", "Tensor", "Vocabulary", "backward", "build_vocabulary",
           "check_gradients", "no_grad"]
