"""Minimal reverse-mode autodiff engine on numpy."""

from . import ops
from .core import (ContractError, DimensionError, NumericError, Tensor, backward, default_dtype, float64_mode,
                   grad_enabled, no_grad)
from .gradcheck import GradcheckReport, gradcheck
from .nn import (LSTM, BatchNorm1d, Conv1d, Conv2d, ConvTranspose1d, Dropout, Linear, Module, Parameter)

__all__ = [
    "ops", "Tensor", "backward", "default_dtype", "float64_mode", "grad_enabled", "no_grad",
    "ContractError", "DimensionError", "NumericError", "GradcheckReport", "gradcheck",
    "Module", "Parameter", "Linear", "Conv1d", "ConvTranspose1d", "Conv2d", "BatchNorm1d", "Dropout", "LSTM",
]
