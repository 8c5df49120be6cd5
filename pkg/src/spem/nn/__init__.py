"""Small numpy neural-network engine with explicit backward passes."""

from .gradcheck import grad_check, rel_error
from .layers import (LSTM, BatchNorm, Conv2D, Dense, Dropout, Flatten, GlobalAvgPool, Layer,
                     ReLU, ResidualBlock, Sequential, TemporalConv, TemporalMean, conv2d,
                     conv2d_backward, lstm_layer, residual_block)
from .optim import Adam, adam_step, lr_at_epoch, softmax, softmax_xent

__all__ = [
    "LSTM", "Adam", "BatchNorm", "Conv2D", "Dense", "Dropout", "Flatten", "GlobalAvgPool",
    "Layer", "ReLU", "ResidualBlock", "Sequential", "TemporalConv", "TemporalMean",
    "adam_step", "conv2d", "conv2d_backward", "grad_check", "lr_at_epoch", "lstm_layer",
    "rel_error", "residual_block", "softmax", "softmax_xent",
]
