"""Forward-model simulation: blur + noise, and masked observations.

All randomness comes from numpy's PCG64 generator seeded explicitly, so
a seed fully determines the degraded output. Degraded intensities are
kept real-valued and unclipped; quantization happens only at the PGM
file boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convolve import conv2d_valid
from .image import as_image, normalize_kernel


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from a mixed tuple (paths, floats, ints).

    Floats are rendered with repr so distinct values never collide, and
    adding new tuples to a run never perturbs seeds of existing ones.
    """
    import hashlib

    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class DegradationSpec:
    """Tagged forward-operator description: blur(kernel, sigma) or inpaint(mask, sigma)."""

    variant: str  # "blur" | "inpaint"
    sigma: float
    kernel: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.variant not in ("blur", "inpaint"):
            raise ValueError(f"unknown degradation variant {self.variant!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.variant == "blur":
            if self.kernel is None:
                raise ValueError("blur variant requires a kernel")
            normalize_kernel(self.kernel)  # validates normalization, non-negativity
        else:
            if self.mask is None:
                raise ValueError("inpaint variant requires a mask")
            if not np.all((self.mask == 0) | (self.mask == 1)):
                raise ValueError("mask entries must be exactly 0 or 1")


def degrade_blur(x: np.ndarray, k: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Blur with the flipped kernel (valid area only) and add Gaussian noise."""
    x = as_image(x)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    y = conv2d_valid(x, k, flip=True)
    if sigma > 0:
        y = y + rng_from_seed(seed).normal(0.0, sigma, size=y.shape)
    return y


def degrade_inpaint(x: np.ndarray, missing_fraction: float, sigma: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Drop a uniform random pixel subset to 0 and add noise to the survivors.

    Returns (degraded, mask) where mask is 1 on observed pixels. Exactly
    round(missing_fraction * H * W) pixels are dropped.
    """
    x = as_image(x)
    if not 0 <= missing_fraction < 1:
        raise ValueError("missing_fraction must be in [0, 1)")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    h, w = x.shape
    n_missing = int(round(missing_fraction * h * w))
    rng = rng_from_seed(seed)
    order = rng.permutation(h * w)
    mask = np.ones(h * w, dtype=np.float64)
    mask[order[:n_missing]] = 0.0
    mask = mask.reshape(h, w)
    y = x.copy()
    if sigma > 0:
        y = y + rng.normal(0.0, sigma, size=x.shape)
    y *= mask  # dropped pixels are exactly 0
    return y, mask
