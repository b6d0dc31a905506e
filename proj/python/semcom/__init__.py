"""Python bindings for the semantic communication simulator."""

from ._semcom import (
    SemcomError,
    allocate_bandwidth,
    awgn,
    csv_columns,
    generate_synthetic,
    guidance_loss,
    iou,
    noise_variance,
    psnr,
    run_experiment,
    snr_to_timestep,
    ssim,
    weighted_mse,
)

__all__ = [
    "SemcomError",
    "allocate_bandwidth",
    "awgn",
    "csv_columns",
    "generate_synthetic",
    "guidance_loss",
    "iou",
    "noise_variance",
    "psnr",
    "run_experiment",
    "snr_to_timestep",
    "ssim",
    "weighted_mse",
]
