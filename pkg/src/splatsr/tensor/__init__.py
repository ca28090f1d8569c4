"""Minimal reverse-mode autodiff over numpy arrays."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .core import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    clamp,
    concat,
    debug_finite,
    div,
    exp,
    gather,
    gelu,
    get_default_dtype,
    getitem,
    layer_norm,
    linear,
    log_attention,
    log,
    make_node,
    matmul,
    mean,
    mse,
    mul,
    neg,
    power,
    no_grad,
    precision,
    record_attention,
    relu,
    reshape,
    scaled_dot_attention,
    set_default_dtype,
    sigmoid,
    softmax,
    sqrt,
    stack,
    sub,
    swap_last,
    tanh,
    transpose,
    tsum,
)
from .gradcheck import GradcheckReport, gradcheck
from .optim import Adam, AdamState, adam_step
