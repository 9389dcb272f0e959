from . import functional
from .gradcheck import check_gradients, numeric_grad, rel_error
from .layers import (BatchNorm, DepthwiseConv1d, Dropout, Embedding, LayerNorm, Linear,
                     LSTMCell, Module)
from .optim import SGD, Adam, sgd_step
from .rng import Rng, xavier_uniform
from .tensor import (Parameter, ShapeError, Tensor, as_tensor, concat, default_dtype,
                     get_default_dtype, matmul, no_grad, pad_time, set_default_dtype, stack,
                     where)

__all__ = [
    "functional", "check_gradients", "numeric_grad", "rel_error", "BatchNorm",
    "DepthwiseConv1d", "Dropout", "Embedding", "LayerNorm", "Linear", "LSTMCell", "Module",
    "SGD", "Adam", "sgd_step", "Rng", "xavier_uniform", "Parameter", "ShapeError", "Tensor",
    "as_tensor", "concat", "default_dtype", "get_default_dtype", "matmul", "no_grad",
    "pad_time", "set_default_dtype", "stack", "where",
]
