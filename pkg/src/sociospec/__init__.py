"""Desk-scale lab for sociodemographic specialization of transformer encoders."""

__version__ = "0.1.0"

from .autograd import Tensor, grad_check  # noqa: F401
