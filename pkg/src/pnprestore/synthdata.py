"""Synthetic desk-scale data: dead-leaves images and motion-blur kernels.

The benchmark protocol needs natural-looking gray-scale photographs and
a set of large motion-blur kernels. Neither ships with this repository,
so both are generated deterministically: dead-leaves renderings (opaque
disks with power-law radii, the standard scale-invariant stand-in for
natural image statistics) and random-walk motion kernels. Every output
is a pure function of its seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .convolve import conv2d_valid
from .degrade import derive_seed, rng_from_seed
from .image import normalize_kernel, write_kernel, write_pgm


def dead_leaves_image(height: int, width: int, seed: int, n_disks: int = 400,
                      r_min: float = 2.0, r_max: float = 40.0, alpha: float = 3.0) -> np.ndarray:
    """Render opaque random disks with power-law radii onto a gray canvas.

    Later disks occlude earlier ones. Returns floats in [0, 255].
    """
    if height < 1 or width < 1:
        raise ValueError("image dimensions must be positive")
    if not (0 < r_min <= r_max) or alpha <= 1:
        raise ValueError("need 0 < r_min <= r_max and alpha > 1")
    rng = rng_from_seed(seed)
    img = np.full((height, width), 128.0)
    rows = np.arange(height)[:, None]
    cols = np.arange(width)[None, :]
    # Inverse-CDF sampling of p(r) ~ r^-alpha on [r_min, r_max].
    u = rng.uniform(size=n_disks)
    e = 1.0 - alpha
    radii = (r_min**e + u * (r_max**e - r_min**e)) ** (1.0 / e)
    cy = rng.uniform(-r_max, height + r_max, size=n_disks)
    cx = rng.uniform(-r_max, width + r_max, size=n_disks)
    grays = rng.uniform(8.0, 247.0, size=n_disks)
    for i in range(n_disks):
        disk = (rows - cy[i]) ** 2 + (cols - cx[i]) ** 2 <= radii[i] ** 2
        img[disk] = grays[i]
    return img


def gaussian_kernel(size: int, std: float) -> np.ndarray:
    """Isotropic Gaussian blur kernel, normalized to unit sum."""
    if size < 1 or size % 2 == 0:
        raise ValueError("size must be a positive odd integer")
    if std <= 0:
        raise ValueError("std must be positive")
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * std**2))
    return normalize_kernel(np.outer(g, g))


def motion_kernel(size: int, seed: int, steps: int | None = None,
                  momentum: float = 0.75, step_std: float = 0.9) -> np.ndarray:
    """Random-walk motion-blur kernel: a jittery camera path with momentum.

    The path deposits bilinear weights inside a size x size grid
    (reflecting at the borders), is mildly smoothed, and normalized.
    """
    if size < 3 or size % 2 == 0:
        raise ValueError("size must be an odd integer >= 3")
    rng = rng_from_seed(seed)
    steps = steps or 4 * size
    k = np.zeros((size, size))
    pos = np.array([(size - 1) / 2.0, (size - 1) / 2.0])
    vel = rng.normal(0.0, step_std, size=2)
    for _ in range(steps):
        r, c = pos
        r0, c0 = int(np.floor(r)), int(np.floor(c))
        fr, fc = r - r0, c - c0
        for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                          (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
            rr, cc = r0 + dr, c0 + dc
            if 0 <= rr < size and 0 <= cc < size:
                k[rr, cc] += w
        vel = momentum * vel + (1 - momentum) * rng.normal(0.0, step_std, size=2) * 4.0
        pos = pos + vel
        for axis in (0, 1):
            if pos[axis] < 0.0:
                pos[axis] = -pos[axis]
                vel[axis] = -vel[axis]
            elif pos[axis] > size - 1:
                pos[axis] = 2 * (size - 1) - pos[axis]
                vel[axis] = -vel[axis]
    # One 3x3 box smoothing pass keeps the path from being needle-thin.
    box = np.ones((3, 3)) / 9.0
    k = conv2d_valid(np.pad(k, 1, mode="constant"), box)
    return normalize_kernel(k)


DESK_KERNEL_SIZES = (9, 11, 13, 15, 17)


def desk_kernels(seed: int = 0) -> list[np.ndarray]:
    """The five desk-scale motion kernels, one per size in DESK_KERNEL_SIZES."""
    return [motion_kernel(s, derive_seed("kernel", i, s, seed))
            for i, s in enumerate(DESK_KERNEL_SIZES)]


def desk_inpaint_images(seed: int = 0, n: int = 5, size: int = 128) -> list[np.ndarray]:
    """Coarse-structure evaluation images for the heavy-missing-pixel protocol.

    Inpainting with 80% of pixels dropped is conventionally evaluated on
    images whose structures are large relative to the gaps (classical
    large-object photographs rather than fine-textured crops), so the
    desk-scale analog uses dead leaves with a raised minimum radius.
    Disjoint seed stream from the train/test splits.
    """
    return [dead_leaves_image(size, size, derive_seed("inpaint-image", i, seed),
                              n_disks=40, r_min=16.0, r_max=60.0)
            for i in range(n)]


def generate_desk_data(root, n_train: int = 20, n_test: int = 10, size: int = 128,
                       seed: int = 0) -> dict[str, list[str]]:
    """Write the desk dataset under root/: train/, test/ PGMs and kernels/.

    Returns the manifests as lists of path strings. Train and test draw
    from disjoint seed streams.
    """
    root = Path(root)
    out: dict[str, list[str]] = {"train": [], "test": [], "kernels": []}
    for split, count in (("train", n_train), ("test", n_test)):
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            img = dead_leaves_image(size, size, derive_seed("image", split, i, seed))
            path = d / f"img_{i:02d}.pgm"
            write_pgm(path, img)
            out[split].append(str(path))
    kd = root / "kernels"
    kd.mkdir(parents=True, exist_ok=True)
    for i, k in enumerate(desk_kernels(seed)):
        path = kd / f"k{i + 1}.txt"
        write_kernel(path, k)
        out["kernels"].append(str(path))
    return out
