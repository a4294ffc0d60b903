"""Dense tensors with reverse-mode gradients plus the signal kernels used by
trigger synthesis and analysis."""
from .bvtf import load_bvtf, save_bvtf
from .gradcheck import grad_check
from .nnops import bilinear_resize, conv2d, pad_reflect
from .signal import bilinear_warp, fft2, gaussian_kernel1d, gaussian_smooth, ifft2
from .tensor import (
    NonFiniteError,
    Tensor,
    concat,
    layer_norm,
    matmul,
    relu,
    sigmoid,
    softmax,
    tensor,
)

__all__ = [
    "Tensor",
    "tensor",
    "NonFiniteError",
    "concat",
    "relu",
    "sigmoid",
    "softmax",
    "layer_norm",
    "matmul",
    "conv2d",
    "bilinear_resize",
    "pad_reflect",
    "fft2",
    "ifft2",
    "gaussian_kernel1d",
    "gaussian_smooth",
    "bilinear_warp",
    "grad_check",
    "save_bvtf",
    "load_bvtf",
]
