from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    apply_axis_matrix,
    as_tensor,
    concat,
    gelu,
    grad_enabled,
    layer_norm,
    mse,
    no_grad,
    quant_capture,
    quant_playback,
    softmax_lastdim,
    stack,
    tensor,
)
from .module import LayerNorm, Linear, Module
from .optim import AdamW, GradientError
from .resample import area_matrix, bilinear_matrix, downsample_area, resize, upsample_bilinear
from .gradcheck import check_gradients, numeric_gradient

__all__ = [
    "AdamW", "GradientError", "LayerNorm", "Linear", "Module", "NumericError",
    "ShapeError", "Tensor", "apply_axis_matrix", "area_matrix", "as_tensor",
    "bilinear_matrix", "check_gradients", "concat", "downsample_area", "gelu",
    "grad_enabled", "layer_norm", "mse", "no_grad", "numeric_gradient",
    "quant_capture", "quant_playback", "resize", "softmax_lastdim", "stack",
    "tensor", "upsample_bilinear",
]
