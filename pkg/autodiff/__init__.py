"""
Module de tenseurs denses avec différentiation automatique inverse.
"""
from autodiff.tensor import Tape, Tensor, alloc, backward, no_grad, precision_dtype
from autodiff import ops
from autodiff.gradcheck import analytic_gradient, numerical_gradient, relative_error
