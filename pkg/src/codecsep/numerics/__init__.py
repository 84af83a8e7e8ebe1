from . import counter, kernels, tensor
from .backend import backend, get_backend
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .params import ParameterStore
from .tensor import Tensor, parameter

__all__ = [
    "Tensor", "tensor", "parameter", "ParameterStore",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
    "backend", "get_backend", "kernels", "counter",
]
