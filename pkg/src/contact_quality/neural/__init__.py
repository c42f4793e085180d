"""Numpy compute kernels with hand-written backward passes."""

from .functional import (
    ShapeError,
    batchnorm_backward,
    batchnorm_forward,
    conv3d_backward,
    conv3d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    maxpool3d_backward,
    maxpool3d_forward,
    relu_backward,
    relu_forward,
    sigmoid_cross_entropy,
    sigmoid_normalized,
    softmax,
    softmax_cross_entropy,
)
from .gradcheck import GradCheckReport, finite_diff_check
from .layers import BatchNorm, Conv3D, Dense, Dropout, Flatten, Layer, MaxPool3D, ReLU, Sequential
from .optim import AdamState, PlateauScheduler, adam_step, lr_on_plateau

__all__ = [
    "AdamState", "BatchNorm", "Conv3D", "Dense", "Dropout", "Flatten", "GradCheckReport",
    "Layer", "MaxPool3D", "PlateauScheduler", "ReLU", "Sequential", "ShapeError",
    "adam_step", "batchnorm_backward", "batchnorm_forward", "conv3d_backward",
    "conv3d_forward", "dense_backward", "dense_forward", "dropout_backward",
    "dropout_forward", "finite_diff_check", "lr_on_plateau", "maxpool3d_backward",
    "maxpool3d_forward", "relu_backward", "relu_forward", "sigmoid_cross_entropy",
    "sigmoid_normalized", "softmax", "softmax_cross_entropy",
]
