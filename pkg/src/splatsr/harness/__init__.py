"""Synthetic data, backbone, losses, metrics and the train/evaluate loops."""

from .config import RunConfig, RunConfigError, stream_rng
from .imaging import area_downsample, catmull_rom, upsample
from .losses import LossWeights, image_loss, perceptual_proxy
from .metrics import psnr, ssim
from .synthetic import SpecError, SyntheticSceneSpec, generate_scene
