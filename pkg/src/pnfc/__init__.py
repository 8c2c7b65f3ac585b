"""Rain removal from photon-count frame stacks by temporal second-order
photon-number fluctuation correlation."""

from .derain import (CorrelationMap, DerainConfig, baseline_mean, baseline_median,
                     correlation_map, pnfc_reconstruct, reconstruct)
from .imgio import FrameStack, Image, load_stack, read_pgm, save_stack, write_pgm
from .metrics import psnr, ssim
from .rainsim import ComponentTrace, RainParams, SimConfig, synth_stack
from .scene import AtmosphereParams, OpticsParams, synthetic_scene

__version__ = "0.1.0"

__all__ = [
    "AtmosphereParams", "ComponentTrace", "CorrelationMap", "DerainConfig", "FrameStack",
    "Image", "OpticsParams", "RainParams", "SimConfig", "baseline_mean", "baseline_median",
    "correlation_map", "load_stack", "pnfc_reconstruct", "psnr", "read_pgm", "reconstruct",
    "save_stack", "ssim", "synth_stack", "synthetic_scene", "write_pgm",
]
