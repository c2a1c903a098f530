"""Whole-image hyperspectral classification with FreeNet and GS2 sampling.

A small reverse-mode autodiff engine over numpy arrays drives the network;
the hot loops (im2col, col2im, group norm, upsampling) are numba kernels
with numpy twins selected by ``PATCHFREE_NO_NUMBA``.
"""
from ._backend import BACKEND
from .errors import ConfigError, DomainError, FormatError, NumericError, ShapeError, UsageError
from .freenet import (FreeNet, FreeNetConfig, PatchClassifier, build, count_flops,
                      count_flops_patch_based, count_params, predict_labels, predict_padded)
from .gs2 import SampleSchedule, build_schedule, reshuffle_epoch
from .metrics import ConfusionMatrix, average_accuracy, kappa, overall_accuracy, per_class
from .tensor import Tensor, backward, no_grad
from .trainer import OptimizerState, masked_cross_entropy, poly_lr, sgd_step, train

__version__ = "0.1.0"
