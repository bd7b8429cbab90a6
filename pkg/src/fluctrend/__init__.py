"""Dual-branch trend/fluctuation stock return prediction, from the tensor
engine up: autodiff, RWKV + attention layers, panel data tooling, training,
ranking metrics, and a top-k backtester."""

from .model import DualBranchModel, ModelConfig
from .tensor import Parameter, Tensor, no_grad

__all__ = ["DualBranchModel", "ModelConfig", "Parameter", "Tensor", "no_grad"]
__version__ = "0.1.0"
