from . import tensor
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .layers import (
    BiLstmLayer,
    ConformerBlock,
    ConformerEncoder,
    Embedding,
    LayerNorm,
    Linear,
    LstmLayer,
    MultiHeadSelfAttention,
    ParamStore,
    ShapeError,
    affine,
)
from .optim import ScheduleConfig, adam_step, lr_at
from .tensor import Tensor, no_grad

__all__ = [
    "tensor",
    "Tensor",
    "no_grad",
    "ParamStore",
    "ShapeError",
    "affine",
    "Linear",
    "LayerNorm",
    "MultiHeadSelfAttention",
    "ConformerBlock",
    "ConformerEncoder",
    "LstmLayer",
    "BiLstmLayer",
    "Embedding",
    "ScheduleConfig",
    "adam_step",
    "lr_at",
    "save_arrays",
    "load_arrays",
    "CheckpointError",
]
