from .tensor import GradientError, ShapeError, Tensor, as_tensor, no_grad
from .ops import add, channel_affine, conv2d, mean, mul, relu, reshape, slice_batch, square, sub, sum
from .optim import Adam, AdamState

__all__ = [
    "Adam", "AdamState", "GradientError", "ShapeError", "Tensor", "add", "as_tensor",
    "channel_affine", "conv2d", "mean", "mul", "no_grad", "relu", "reshape", "slice_batch", "square", "sub", "sum",
]
