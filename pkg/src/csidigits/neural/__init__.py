"""Small numpy layer engine with hand-written backward passes."""
from .layers import (
    Mode,
    batchnorm_backward,
    batchnorm_forward,
    conv1d_backward,
    conv1d_forward,
    dropout_backward,
    dropout_forward,
    linear_backward,
    linear_forward,
    lstm_backward,
    lstm_forward,
    lstm_step,
    one_hot,
    relu_backward,
    relu_forward,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)
from .optim import Adam, GradCheckReport, adam_step, grad_check
from .params import ParamSet, TrainConfig

__all__ = [
    "Adam", "GradCheckReport", "Mode", "ParamSet", "TrainConfig", "adam_step",
    "batchnorm_backward", "batchnorm_forward", "conv1d_backward", "conv1d_forward",
    "dropout_backward", "dropout_forward", "grad_check", "linear_backward",
    "linear_forward", "lstm_backward", "lstm_forward", "lstm_step", "one_hot",
    "relu_backward", "relu_forward", "sigmoid", "softmax", "softmax_cross_entropy",
]
