from .tensor import (
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    grad_enabled,
    no_grad,
    set_check_finite,
    set_default_dtype,
    use_dtype,
)
from .functional import (
    attention,
    attention_log,
    conv2d,
    group_norm,
    interpolate,
    linear,
    mse,
    reset_attention_log,
    silu,
    softmax,
)
from .params import Parameter, ParameterStore
from .optim import OptimizerState, adamw_step
from .gradcheck import finite_difference_check, random_leaf

__all__ = [
    "Tensor", "as_tensor", "concat", "default_dtype", "grad_enabled", "no_grad",
    "set_check_finite", "set_default_dtype", "use_dtype",
    "attention", "attention_log", "conv2d", "group_norm", "interpolate", "linear",
    "mse", "reset_attention_log", "silu", "softmax",
    "Parameter", "ParameterStore", "OptimizerState", "adamw_step",
    "finite_difference_check", "random_leaf",
]
