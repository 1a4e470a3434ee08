"""Cubemap panorama inpainting: gated-convolution generators, a patch-similarity
side branch trained with a contextual reconstruction loss, WGAN-gp critics,
and PSNR/SSIM evaluation, all on a small numpy reverse-mode engine."""

from .cubemap import cmp_to_erp, erp_to_cmp, split_side_strip, stitch_side_faces
from .layers import InpaintModel, ModelConfig
from .losses import LossReport, LossWeights
from .masks import MaskSpec, sample_mask
from .metrics import psnr, ssim
from .tensor import GradTape, Tensor
from .train import TrainConfig, Trainer, forward_pipeline, inpaint

__version__ = "0.1.0"

__all__ = [
    "GradTape", "InpaintModel", "LossReport", "LossWeights", "MaskSpec", "ModelConfig",
    "Tensor", "TrainConfig", "Trainer", "cmp_to_erp", "erp_to_cmp", "forward_pipeline",
    "inpaint", "psnr", "sample_mask", "split_side_strip", "ssim", "stitch_side_faces",
]
