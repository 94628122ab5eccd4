"""Select the convolution kernel backend at import time.

The compiled extension is used when it was built; set ``GAIT_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

BACKEND = "python"

if os.environ.get("GAIT_PURE_PYTHON", "") not in ("", "0"):
    from ._kernels_py import col2im, conv_direct, conv_direct_input_grad, conv_direct_weight_grad, im2col
else:
    try:
        from ._kernels import col2im, conv_direct, conv_direct_input_grad, conv_direct_weight_grad, im2col

        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import col2im, conv_direct, conv_direct_input_grad, conv_direct_weight_grad, im2col

__all__ = [
    "BACKEND", "col2im", "conv_direct", "conv_direct_input_grad", "conv_direct_weight_grad", "im2col",
]
