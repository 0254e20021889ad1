"""The dense tensor kernel, reverse-mode gradients and the finite-difference oracle."""

from retnet_lab.numerics.autodiff import finite_diff, grad, value_and_grad
from retnet_lab.numerics.tensor import default_eps, precision_dtype, Rng, Tensor

__all__ = [
    "Rng",
    "Tensor",
    "default_eps",
    "finite_diff",
    "grad",
    "precision_dtype",
    "value_and_grad",
]
