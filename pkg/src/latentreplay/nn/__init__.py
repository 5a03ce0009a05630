from .gradcheck import GradCheckReport, finite_diff_check, finite_diff_report
from .ops import (
    avgpool2,
    conv2d,
    global_avgpool,
    linear,
    mse,
    record_relu_masks,
    relu,
    softmax_cross_entropy,
)
from .optim import OptimState, adam_step, grads_of, sgd_step, zero_grads
from .tensor import Tensor, as_tensor, no_grad, set_debug_checks

__all__ = [
    "Tensor",
    "as_tensor",
    "no_grad",
    "set_debug_checks",
    "conv2d",
    "relu",
    "avgpool2",
    "global_avgpool",
    "linear",
    "softmax_cross_entropy",
    "mse",
    "OptimState",
    "sgd_step",
    "adam_step",
    "grads_of",
    "zero_grads",
    "GradCheckReport",
    "finite_diff_check",
    "finite_diff_report",
    "record_relu_masks",
]
