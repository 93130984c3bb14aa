"""Blind image restoration toolkit: degradation synthesis, a Swin-style
restoration net and a small guided latent-diffusion stage."""

from ._core import (
    ContractError,
    FormatError,
    IoError,
    alpha_bars,
    degrade,
    load_image,
    psnr,
    run_cli,
    sample_plan,
    save_image,
    spaced_steps,
    ssim,
    synth_dataset,
)

__all__ = [
    "ContractError",
    "FormatError",
    "IoError",
    "alpha_bars",
    "degrade",
    "load_image",
    "psnr",
    "run_cli",
    "sample_plan",
    "save_image",
    "spaced_steps",
    "ssim",
    "synth_dataset",
]
