from .tensor import (
    Tensor, Tape, TapeError, DetachCache,
    add, sub, mul, scale, matmul, linear, relu, elu, dropout, reshape,
    broadcast_to, concat, tsum, tmean, softmax, detach, gumbel_softmax,
    gumbel_noise, as_tensor,
)
from .layers import DenseLayer, init_dense, make_rng
from .optim import AdamW, AdamWState, adamw_step, cosine_lr
from .gradcheck import finite_difference_gradients, max_relative_error, check_gradients
