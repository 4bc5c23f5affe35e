"""deepmark: robust invisible image watermarking.

A trainable embedder/extractor pair hardened by differentiable noise
simulation, a residual-interpolation path for arbitrary-resolution images,
a watermark-removal network, and a robustness evaluation harness.
"""

from .core import (
    EvalRecord,
    ImageArray,
    WatermarkPayload,
    bit_accuracy,
    load_image,
    psnr,
    save_image,
    ssim,
)

__version__ = "0.1.0"

__all__ = [
    "EvalRecord",
    "ImageArray",
    "WatermarkPayload",
    "bit_accuracy",
    "load_image",
    "psnr",
    "save_image",
    "ssim",
    "__version__",
]
