"""Image containers and file formats.

Images are 2D float64 numpy arrays indexed [row, col]. Clean images use
the [0, 255] intensity range; intermediate iterates of the solvers may
leave that range and are only clipped when written out. Blur kernels are
small 2D float64 arrays normalized to sum 1.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

KERNEL_SUM_TOL = 1e-6


def as_image(a) -> np.ndarray:
    """Validate and convert to a 2D float64 image array."""
    img = np.asarray(a, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"image must be 2D and non-empty, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains NaN or Inf")
    return img


def normalize_kernel(weights, allow_signed: bool = False) -> np.ndarray:
    """Validate a blur kernel and rescale it to unit sum.

    Physical kernels must be non-negative; `allow_signed` permits signed
    test kernels (still rescaled to unit sum).
    """
    k = np.asarray(weights, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] < 1 or k.shape[1] < 1:
        raise ValueError(f"kernel must be 2D and non-empty, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValueError("kernel contains NaN or Inf")
    if not allow_signed and np.any(k < 0):
        raise ValueError("kernel has negative weights (pass allow_signed=True for signed kernels)")
    total = float(k.sum())
    if abs(total) < KERNEL_SUM_TOL:
        raise ValueError(f"kernel sum {total} too close to zero to normalize")
    return k / total


def pad_replicate(img: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    """Grow an image by replicating its edge pixels into the margins."""
    if min(top, bottom, left, right) < 0:
        raise ValueError("margins must be non-negative")
    return np.pad(img, ((top, bottom), (left, right)), mode="edge")


# --- PGM ----------------------------------------------------------------

def _read_pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace/comment-separated ASCII integers, return (values, offset)."""
    values: list[int] = []
    i = 0
    n = len(data)
    while len(values) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PGM header")
        values.append(int(data[i:j]))
        i = j
    return values, i


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit PGM file (binary P5 or plain P2) as a float64 image."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P5", b"P2"):
        raise ValueError(f"not a PGM file (magic {data[:2]!r}): {path}")
    binary = data[:2] == b"P5"
    header, offset = _read_pgm_tokens(data[2:], 3)
    width, height, maxval = header
    if width < 1 or height < 1:
        raise ValueError(f"bad PGM dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise ValueError(f"only 8-bit PGM supported, maxval {maxval}")
    if binary:
        start = 2 + offset + 1  # single whitespace byte after maxval
        raster = np.frombuffer(data, dtype=np.uint8, count=height * width, offset=start)
    else:
        body, _ = _read_pgm_tokens(data[2 + offset :], height * width)
        raster = np.asarray(body, dtype=np.uint8)
    return raster.reshape(height, width).astype(np.float64)


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Clip to [0, 255] and round to the nearest 8-bit level."""
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray, plain: bool = False) -> None:
    """Write an image as 8-bit PGM (binary P5, or plain P2 if `plain`).

    Values are clipped to [0, 255] and rounded; integer-valued images in
    range round-trip bit-exactly. The file is written atomically.
    """
    img = as_image(img)
    raster = quantize_u8(img)
    h, w = raster.shape
    if plain:
        lines = [b"P2", f"{w} {h}".encode(), b"255"]
        lines += [" ".join(str(v) for v in row).encode() for row in raster]
        payload = b"\n".join(lines) + b"\n"
    else:
        payload = f"P5\n{w} {h}\n255\n".encode() + raster.tobytes()
    atomic_write_bytes(path, payload)


# --- kernel files -------------------------------------------------------

def read_kernel(path, allow_signed: bool = False) -> np.ndarray:
    """Read a kernel text file: first line "kh kw", then kh*kw reals."""
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise ValueError(f"kernel file too short: {path}")
    kh, kw = int(tokens[0]), int(tokens[1])
    if kh < 1 or kw < 1:
        raise ValueError(f"bad kernel dimensions {kh}x{kw}")
    vals = tokens[2:]
    if len(vals) != kh * kw:
        raise ValueError(f"kernel file has {len(vals)} weights, expected {kh * kw}")
    k = np.array([float(v) for v in vals], dtype=np.float64).reshape(kh, kw)
    return normalize_kernel(k, allow_signed=allow_signed)


def write_kernel(path, k: np.ndarray) -> None:
    kh, kw = k.shape
    rows = [f"{kh} {kw}"]
    rows += [" ".join(f"{v:.17g}" for v in row) for row in k]
    atomic_write_bytes(path, ("\n".join(rows) + "\n").encode())


# --- atomic writes ------------------------------------------------------

def atomic_write_bytes(path, payload: bytes) -> None:
    """Write a file via temp-and-rename so readers never see partial output."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())
