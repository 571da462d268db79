from .tensor import (Tensor, add, as_tensor, backward, concat, div, exp, getitem, is_grad_enabled,
                     log, matmul, mean, mul, no_grad, reshape, sqrt, stack, sub, sum_, swapaxes,
                     transpose, abs_)
from .functional import (ConfigError, DimensionError, attention, avg_pool2d, bce_with_logits,
                         bilinear_resize, binary_cross_entropy, conv2d, gather_rows, group_norm,
                         layer_norm, leaky_relu, linear, patch_embed, relu, scatter_rows,
                         sigmoid, softmax, softplus, sparse_apply)
from .nn import Conv2d, GroupNorm, LayerNorm, Linear, Module, Parameter, kaiming_uniform
from .optim import Adam, AdamState, adam_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [name for name in dir() if not name.startswith("_")]
