"""Convolutions and discrete Fourier transforms.

Anchoring convention: a (kh, kw) kernel is centered at (kh//2, kw//2).
Circular convolution with the 1x1 identity kernel is the identity map,
and cropping a circular convolution to its wrap-free region equals
`conv2d_valid(img, k, flip=True)`. The forward DFT is unnormalized; the
inverse divides by H*W (the numpy convention).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def kernel_center(k: np.ndarray) -> tuple[int, int]:
    return k.shape[0] // 2, k.shape[1] // 2


def conv2d_valid(img: np.ndarray, k: np.ndarray, flip: bool = False) -> np.ndarray:
    """Valid-area correlation of `img` with `k`.

    With flip=True the kernel is rotated 180 degrees first, i.e. true
    convolution. Output shape is (H-kh+1, W-kw+1).
    """
    kh, kw = k.shape
    if img.shape[0] < kh or img.shape[1] < kw:
        raise ValueError(f"kernel {k.shape} larger than image {img.shape}")
    if flip:
        k = k[::-1, ::-1]
    windows = sliding_window_view(img, (kh, kw))
    return np.einsum("ijab,ab->ij", windows, k, optimize=True)


def conv2d_valid_adjoint(r: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Adjoint of x -> conv2d_valid(x, k, flip=True).

    Zero-pads r by the kernel margins and correlates with k, expanding a
    valid-size residual back to the full frame: <Ax, r> == <x, A^T r>.
    """
    kh, kw = k.shape
    padded = np.pad(r, ((kh - 1, kh - 1), (kw - 1, kw - 1)), mode="constant")
    return conv2d_valid(padded, k, flip=False)


def conv2d_circular(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """True convolution with wrap-around boundary, kernel center-anchored.

    Spatial-domain roll-and-add; the FFT product path is kept as an
    independent cross-check in the tests.
    """
    kh, kw = k.shape
    cy, cx = kernel_center(k)
    out = np.zeros_like(img, dtype=np.float64)
    for a in range(kh):
        for b in range(kw):
            w = k[a, b]
            if w == 0.0:
                continue
            out += w * np.roll(img, (a - cy, b - cx), axis=(0, 1))
    return out


def conv2d_circular_adjoint(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Adjoint of x -> conv2d_circular(x, k): circular correlation.

    For odd kernel sizes this equals conv2d_circular with the flipped
    kernel; even sizes also need the one-pixel center shift that plain
    flipping misses, so the gathers are written out directly.
    """
    kh, kw = k.shape
    cy, cx = kernel_center(k)
    out = np.zeros_like(img, dtype=np.float64)
    for a in range(kh):
        for b in range(kw):
            w = k[a, b]
            if w == 0.0:
                continue
            out += w * np.roll(img, (cy - a, cx - b), axis=(0, 1))
    return out


def dft2(img: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT; returns a complex plane."""
    return np.fft.fft2(img)


def idft2(plane: np.ndarray) -> np.ndarray:
    """Inverse 2D DFT (divides by H*W); returns the real part."""
    return np.real(np.fft.ifft2(plane))


def embed_kernel(k: np.ndarray, shape: tuple[int, int], center: tuple[int, int] | None = None) -> np.ndarray:
    """Embed a small kernel into a (H, W) frame with its center at (0, 0).

    The embedded frame's DFT is the frequency response of circular
    convolution with `k` under this module's anchoring.
    """
    h, w = shape
    kh, kw = k.shape
    if kh > h or kw > w:
        raise ValueError(f"kernel {k.shape} does not fit frame {shape}")
    cy, cx = center if center is not None else kernel_center(k)
    frame = np.zeros(shape, dtype=np.float64)
    frame[:kh, :kw] = k
    return np.roll(frame, (-cy, -cx), axis=(0, 1))


def kernel_autocorrelation(k: np.ndarray) -> np.ndarray:
    """Full autocorrelation of a kernel: a[d] = sum_m k[m] * k[m+d].

    Output is (2*kh-1, 2*kw-1) with zero lag at (kh-1, kw-1); this is the
    spatial kernel of the normal operator (adjoint then forward blur).
    """
    kh, kw = k.shape
    out = np.zeros((2 * kh - 1, 2 * kw - 1), dtype=np.float64)
    for di in range(-kh + 1, kh):
        lo_i, hi_i = max(0, -di), kh - max(0, di)
        for dj in range(-kw + 1, kw):
            lo_j, hi_j = max(0, -dj), kw - max(0, dj)
            a = k[lo_i:hi_i, lo_j:hi_j]
            b = k[lo_i + di : hi_i + di, lo_j + dj : hi_j + dj]
            out[di + kh - 1, dj + kw - 1] = float(np.sum(a * b))
    return out
