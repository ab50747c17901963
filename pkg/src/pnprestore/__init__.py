"""Plug-and-play MAP image restoration.

A small, self-contained toolkit for restoring gray-scale images with an
ADMM splitting whose prior step is a learned MAP denoiser: FFT-domain
data solves for deblurring, masked least squares for inpainting, and
from-scratch training of the denoiser pair (an MMSE denoising
autoencoder plus the MAP net distilled from it).
"""

__version__ = "0.1.0"

from .image import read_pgm, write_pgm, read_kernel, write_kernel, pad_replicate
from .convolve import conv2d_valid, conv2d_circular, dft2, idft2
from .metrics import psnr, ssim
from .net import ConvNet, init_weights, forward, backward, save_weights, load_weights
from .solver import build_plan, solve_data_fft, solve_data_direct, solve_data_gd
from .admm import RestoreConfig, restore_deblur, restore_inpaint, median_fill

__all__ = [
    "read_pgm", "write_pgm", "read_kernel", "write_kernel", "pad_replicate",
    "conv2d_valid", "conv2d_circular", "dft2", "idft2",
    "psnr", "ssim",
    "ConvNet", "init_weights", "forward", "backward", "save_weights", "load_weights",
    "build_plan", "solve_data_fft", "solve_data_direct", "solve_data_gd",
    "RestoreConfig", "restore_deblur", "restore_inpaint", "median_fill",
]
