"""Data-fidelity subproblem solvers.

The deblurring update minimizes, over x,

    (1 / (2 sigma^2)) ||K x - y||^2 + (rho / 2) ||x - z + lam||^2

with K circular convolution; the minimizer has the frequency-domain
closed form implemented by `solve_data_fft`. A dense normal-equations
solve (`solve_data_direct`) is kept as a small-size oracle. `solve_data_gd`
handles the masked (inpainting) operator by gradient descent, with an
exact per-pixel alternative since the mask operator is diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convolve import (
    conv2d_circular,
    conv2d_circular_adjoint,
    embed_kernel,
    kernel_autocorrelation,
    kernel_center,
)
from .errors import DivergenceError

DIRECT_SOLVE_MAX = 24  # dense oracle guard, keep it out of production paths


def pad_margins(k: np.ndarray) -> tuple[int, int, int, int]:
    """(top, bottom, left, right) margins restoring a valid observation to full size."""
    kh, kw = k.shape
    return (kh - 1) // 2, kh // 2, (kw - 1) // 2, kw // 2


def valid_slices(k: np.ndarray, full_shape: tuple[int, int]) -> tuple[slice, slice]:
    """Slices of the full frame where circular blur involves no wrap-around."""
    kh, kw = k.shape
    h, w = full_shape
    top, left = (kh - 1) // 2, (kw - 1) // 2
    return slice(top, top + h - kh + 1), slice(left, left + w - kw + 1)


@dataclass(frozen=True)
class FftSolverPlan:
    """Precomputed transforms for the deblurring closed form, reusable across iterations."""

    shape: tuple[int, int]
    otf_adjoint: np.ndarray  # DFT of the flipped kernel (realizes K^T)
    denom: np.ndarray        # DFT of the normal-operator kernel + sigma^2 * rho (real)
    sig2rho: float


def build_plan(k: np.ndarray, height: int, width: int, sigma: float, rho: float) -> FftSolverPlan:
    """Precompute the frequency-domain pieces for `solve_data_fft`.

    The normal operator K^T K is realized spatially as the kernel
    autocorrelation, embedded and transformed once.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    kh, kw = k.shape
    if kh > height or kw > width:
        raise ValueError(f"kernel {k.shape} does not fit {height}x{width} frame")
    cy, cx = kernel_center(k)
    flipped = k[::-1, ::-1]
    otf_adjoint = np.fft.fft2(embed_kernel(flipped, (height, width), center=(kh - 1 - cy, kw - 1 - cx)))
    auto = kernel_autocorrelation(k)
    if auto.shape[0] > height or auto.shape[1] > width:
        raise ValueError(f"autocorrelation {auto.shape} does not fit {height}x{width} frame")
    f_ktk = np.fft.fft2(embed_kernel(auto, (height, width), center=(kh - 1, kw - 1)))
    sig2rho = float(sigma) ** 2 * float(rho)
    denom = f_ktk.real + sig2rho
    if denom.min() <= 0:
        raise ValueError("data-solve denominator not strictly positive")
    return FftSolverPlan((height, width), otf_adjoint, denom, sig2rho)


def solve_data_fft(plan: FftSolverPlan, y_full: np.ndarray, z_hat: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Exact minimizer of the data objective under circular boundary conditions."""
    for name, a in (("y", y_full), ("z_hat", z_hat), ("lambda", lam)):
        if a.shape != plan.shape:
            raise ValueError(f"{name} shape {a.shape} != plan shape {plan.shape}")
    num = plan.otf_adjoint * np.fft.fft2(y_full) + plan.sig2rho * np.fft.fft2(z_hat - lam)
    return np.real(np.fft.ifft2(num / plan.denom))


def _dense_circular_matrix(k: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    cy, cx = kernel_center(k)
    m = np.zeros((h * w, h * w))
    for a in range(k.shape[0]):
        for b in range(k.shape[1]):
            weight = k[a, b]
            if weight == 0.0:
                continue
            for i in range(h):
                src_i = (i - a + cy) % h
                for j in range(w):
                    m[i * w + j, src_i * w + (j - b + cx) % w] += weight
    return m


def solve_data_direct(k: np.ndarray, y_full: np.ndarray, z_hat: np.ndarray, lam: np.ndarray,
                      sigma: float, rho: float) -> np.ndarray:
    """Dense normal-equations solve with circular K materialized; test oracle only."""
    h, w = y_full.shape
    if h > DIRECT_SOLVE_MAX or w > DIRECT_SOLVE_MAX:
        raise ValueError(f"direct solve limited to {DIRECT_SOLVE_MAX}x{DIRECT_SOLVE_MAX} images")
    mat = _dense_circular_matrix(k, (h, w))
    sig2rho = float(sigma) ** 2 * float(rho)
    a = mat.T @ mat + sig2rho * np.eye(h * w)
    rhs = mat.T @ y_full.ravel() + sig2rho * (z_hat - lam).ravel()
    return np.linalg.solve(a, rhs).reshape(h, w)


def data_objective_gradient(k: np.ndarray, x: np.ndarray, y_full: np.ndarray,
                            z_hat: np.ndarray, lam: np.ndarray, sigma: float, rho: float) -> np.ndarray:
    """Gradient of the circular data objective at x (optimality checks)."""
    residual = conv2d_circular(x, k) - y_full
    return conv2d_circular_adjoint(residual, k) / sigma**2 + rho * (x - z_hat + lam)


def estimate_boundary(x_hat: np.ndarray, k: np.ndarray, y_valid: np.ndarray) -> np.ndarray:
    """Synthesize the unobserved margin of y from the current estimate.

    Returns a full-size observation whose valid region is exactly
    `y_valid` and whose margin comes from circularly blurring `x_hat`.
    """
    kh, kw = k.shape
    expect = (x_hat.shape[0] - kh + 1, x_hat.shape[1] - kw + 1)
    if y_valid.shape != expect:
        raise ValueError(f"valid observation shape {y_valid.shape}, expected {expect}")
    y_full = conv2d_circular(x_hat, k)
    sy, sx = valid_slices(k, x_hat.shape)
    y_full[sy, sx] = y_valid
    return y_full


def solve_data_mask_exact(y: np.ndarray, mask: np.ndarray, sigma: float, rho: float,
                          z_hat: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Per-pixel closed form for the diagonal mask operator.

    At sigma=0 this reduces to the constraint limit: observed pixels copy
    y, missing pixels copy z - lam.
    """
    prior = z_hat - lam
    if sigma == 0:
        return np.where(mask > 0, y, prior)
    inv_s2 = 1.0 / sigma**2
    return (mask * y * inv_s2 + rho * prior) / (mask * inv_s2 + rho)


def solve_data_gd(y: np.ndarray, mask: np.ndarray, sigma: float, rho: float,
                  z_hat: np.ndarray, lam: np.ndarray, steps: int = 200,
                  step_size: float | None = None, x0: np.ndarray | None = None) -> np.ndarray:
    """Gradient descent on the masked data objective.

    Default step size 1 / (1/sigma^2 + rho) is the inverse of the largest
    per-pixel curvature, which makes the descent monotone. Aborts if the
    energy rises for 10 consecutive steps.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if sigma <= 0:
        raise ValueError("solve_data_gd requires sigma > 0 (use solve_data_mask_exact at sigma=0)")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("mask entries must be exactly 0 or 1")
    inv_s2 = 1.0 / sigma**2
    if step_size is None:
        step_size = 1.0 / (inv_s2 + rho)
    prior = z_hat - lam
    x = prior.copy() if x0 is None else x0.copy()

    def energy(v):
        return 0.5 * inv_s2 * float(np.sum((mask * v - y) ** 2)) + 0.5 * rho * float(np.sum((v - prior) ** 2))

    last = energy(x)
    rising = 0
    for _ in range(steps):
        grad = inv_s2 * mask * (mask * x - y) + rho * (x - prior)
        x -= step_size * grad
        e = energy(x)
        rising = rising + 1 if e > last else 0
        if rising >= 10:
            raise DivergenceError("masked data solve: energy rose for 10 consecutive steps")
        last = e
    return x
