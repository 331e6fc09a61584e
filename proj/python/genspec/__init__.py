"""Python bindings for the genspec reconstruction-generation spectrum laboratory."""

from ._genspec import (
    DataError,
    NumericError,
    ShapeError,
    UsageError,
    cli,
    frechet_distance,
    generate_dataset,
    generate_phantom,
    kid,
    load_dataset,
    make_mask,
    maskgit_schedule,
    noise_schedule,
    psnr,
    sampling_timesteps,
    save_dataset,
    selftest,
    spearman,
    ssim,
)

__all__ = [
    "DataError",
    "NumericError",
    "ShapeError",
    "UsageError",
    "cli",
    "frechet_distance",
    "generate_dataset",
    "generate_phantom",
    "kid",
    "load_dataset",
    "make_mask",
    "maskgit_schedule",
    "noise_schedule",
    "psnr",
    "sampling_timesteps",
    "save_dataset",
    "selftest",
    "spearman",
    "ssim",
]
