"""Training for the denoiser pair.

Two nets are trained in sequence. First an MMSE denoising autoencoder R
learns to undo Gaussian noise of std sigma_r. Then the MAP denoiser D is
distilled from the frozen R: for a training input v,

    v_bar  = D(v)
    v_bbar = R(v_bar + eta),   eta ~ N(0, sigma_r^2)  (fresh each step)

    loss = 1/(2 sigma_r^2) ||v_bar - v_bbar||^2 + rho/2 ||v_bar - v||^2

and gradients reach D only through the direct appearance of v_bar: the
path through R is blocked, v_bbar is a constant. (The residual of an
ideal R is sigma_r^2 times the score of the smoothed image density, so
this loss descends the denoising objective -log p(z) + rho/2 ||z - v||^2
without ever needing paired ground truth.) Squared L2 norms with the 1/2
factors are used throughout so that the gradient is exactly
(1/sigma_r^2)(v_bar - v_bbar) + rho (v_bar - v).

Losses are reported per pixel (sum of squares / pixel count, averaged
over the batch). No ground-truth pairs are consumed by the MAP stage.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError
from .image import as_image, atomic_write_text
from .net import (
    ConvNet,
    GradientSet,
    backward,
    backward_batch,
    default_channels,
    forward,
    forward_batch,
    init_weights,
    save_weights,
)


@dataclass
class TrainConfig:
    sigma_r: float = 7.0
    rho: float | None = None  # defaults to 1 / sigma_r^2
    patch_size: int = 40
    batch_size: int = 16
    steps: int = 1000
    learning_rate: float = 1e-4
    seed: int = 0
    layers: int = 7
    width: int = 32
    optimizer: str = "sgd"  # "sgd" | "adam"
    grad_clip: float = 1e3
    holdout_patches: int = 8
    log_every: int = 25

    def __post_init__(self):
        if self.sigma_r <= 0:
            raise ValueError("sigma_r must be positive")
        if self.rho is None:
            self.rho = 1.0 / self.sigma_r**2
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.patch_size < 2 * self.layers + 1:
            raise ValueError(
                f"patch_size {self.patch_size} smaller than receptive field {2 * self.layers + 1}"
            )
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def channels(self) -> list[int]:
        return default_channels(self.layers, self.width)


@dataclass
class PatchDataset:
    """Fixed-size training patches plus the manifest that regenerates them."""

    patches: np.ndarray  # (N, p, p)
    manifest: list[tuple[str, int, int]]
    patch_size: int

    def __post_init__(self):
        if self.patches.ndim != 3 or self.patches.shape[0] == 0:
            raise ValueError("dataset must contain at least one patch")
        if self.patches.shape[1:] != (self.patch_size, self.patch_size):
            raise ValueError("patch array shape does not match patch_size")

    def __len__(self) -> int:
        return self.patches.shape[0]


def dataset_from_images(named_images: Sequence[tuple[str, np.ndarray]], patch_size: int,
                        stride: int | None = None) -> PatchDataset:
    """Cut a grid of patches from (name, image) pairs; grid offsets go in the manifest."""
    stride = stride or patch_size
    patches = []
    manifest = []
    for name, img in named_images:
        img = as_image(img)
        h, w = img.shape
        for r in range(0, h - patch_size + 1, stride):
            for c in range(0, w - patch_size + 1, stride):
                patches.append(img[r : r + patch_size, c : c + patch_size])
                manifest.append((name, r, c))
    if not patches:
        raise ValueError(f"no image large enough for {patch_size}x{patch_size} patches")
    return PatchDataset(np.stack(patches), manifest, patch_size)


def dataset_from_files(paths: Sequence[str], patch_size: int, stride: int | None = None) -> PatchDataset:
    from .image import read_pgm

    return dataset_from_images([(str(p), read_pgm(p)) for p in paths], patch_size, stride)


def sample_patch_batch(ds: PatchDataset, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n patches with random flips and 90-degree rotations."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if n == 0:
        return np.empty((0, ds.patch_size, ds.patch_size))
    idx = rng.integers(0, len(ds), size=n)
    rots = rng.integers(0, 4, size=n)
    flips = rng.integers(0, 2, size=n)
    out = np.empty((n, ds.patch_size, ds.patch_size))
    for i in range(n):
        p = ds.patches[idx[i]]
        p = np.rot90(p, k=int(rots[i]))
        if flips[i]:
            p = p[:, ::-1]
        out[i] = p
    return out


# --- losses ----------------------------------------------------------------

def mse_dae_loss(r_out: np.ndarray, clean: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of squared differences and its gradient 2*(r_out - clean)."""
    if r_out.shape != clean.shape:
        raise ValueError(f"shape mismatch {r_out.shape} vs {clean.shape}")
    diff = r_out - clean
    return float(np.sum(diff * diff)), 2.0 * diff


def map_grad_vbar(v_bar: np.ndarray, v_bbar: np.ndarray, v: np.ndarray,
                  sigma_r: float, rho: float) -> np.ndarray:
    """Gradient of the MAP loss w.r.t. the denoiser output (v_bbar held constant)."""
    return (v_bar - v_bbar) / sigma_r**2 + rho * (v_bar - v)


def _dae_as_callable(dae, sigma_r: float) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(dae, ConvNet):
        if dae.sigma_r is None or abs(dae.sigma_r - sigma_r) > 1e-9:
            raise ValueError(
                f"DAE was trained for sigma_r={dae.sigma_r}, config wants {sigma_r}"
            )
        return lambda img: forward(dae, img)
    return dae  # opaque callable, trusted as-is


def map_loss(v: np.ndarray, d_net: ConvNet, dae, sigma_r: float, rho: float,
             noise: np.ndarray | None = None) -> tuple[float, GradientSet]:
    """MAP-denoiser loss for one input and its gradients for D.

    `dae` may be a ConvNet (its sigma_r header is checked) or any opaque
    image->image callable; only its forward output is ever used, so the
    regularization path contributes no gradients through the DAE.
    `noise` is the injected perturbation added to D's output before the
    DAE sees it (zero if None).
    """
    v = as_image(v)
    fn = _dae_as_callable(dae, sigma_r)
    v_bar = forward(d_net, v)
    v_in = v_bar + noise if noise is not None else v_bar
    v_bbar = fn(v_in)
    loss = float(np.sum((v_bar - v_bbar) ** 2)) / (2 * sigma_r**2) \
        + 0.5 * rho * float(np.sum((v_bar - v) ** 2))
    upstream = map_grad_vbar(v_bar, v_bbar, v, sigma_r, rho)
    grads, _ = backward(d_net, v, upstream)
    return loss, grads


# --- optimizers -------------------------------------------------------------

class _Updater:
    """Parameter update rule with global gradient-norm clipping."""

    def __init__(self, net: ConvNet, cfg: TrainConfig):
        self.net = net
        self.lr = cfg.learning_rate
        self.clip = cfg.grad_clip
        self.adam = cfg.optimizer == "adam"
        if self.adam:
            self.t = 0
            self.m_w = [np.zeros_like(l.weights) for l in net.layers]
            self.v_w = [np.zeros_like(l.weights) for l in net.layers]
            self.m_b = [np.zeros_like(l.bias) for l in net.layers]
            self.v_b = [np.zeros_like(l.bias) for l in net.layers]

    def step(self, grads: GradientSet) -> None:
        norm = grads.norm()
        if self.clip and norm > self.clip:
            grads = grads.scaled(self.clip / norm)
        if not self.adam:
            for layer, gw, gb in zip(self.net.layers, grads.weights, grads.biases):
                layer.weights -= self.lr * gw
                layer.bias -= self.lr * gb
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.t += 1
        corr1 = 1 - b1**self.t
        corr2 = 1 - b2**self.t
        for i, layer in enumerate(self.net.layers):
            for m, v, g, p in ((self.m_w[i], self.v_w[i], grads.weights[i], layer.weights),
                               (self.m_b[i], self.v_b[i], grads.biases[i], layer.bias)):
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                p -= self.lr * (m / corr1) / (np.sqrt(v / corr2) + eps)


class _TrainLog:
    def __init__(self):
        self.rows: list[tuple[int, float, float]] = []

    def add(self, step: int, loss: float, holdout: float) -> None:
        self.rows.append((step, loss, holdout))

    def write(self, path) -> None:
        lines = ["step,loss,holdout_loss"]
        lines += [f"{s},{l:.6g},{h:.6g}" for s, l, h in self.rows]
        atomic_write_text(path, "\n".join(lines) + "\n")


def _checkpoint(prefix, net: ConvNet, step: int) -> None:
    save_weights(f"{prefix}.step{step:06d}.bin", net)


# --- DAE training ------------------------------------------------------------

def train_dae(ds: PatchDataset, cfg: TrainConfig, log_path=None,
              checkpoint_every: int = 0, checkpoint_prefix=None) -> ConvNet:
    """Train the MMSE denoising autoencoder on fresh noise each step.

    Returns R with its sigma_r recorded. Raises DivergenceError if the
    loss goes non-finite.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    net = init_weights(cfg.channels(), seed=cfg.seed, zero_last=True)
    holdout_clean = sample_patch_batch(ds, cfg.holdout_patches, rng)
    holdout_noisy = holdout_clean + rng.normal(0.0, cfg.sigma_r, size=holdout_clean.shape)
    updater = _Updater(net, cfg)
    log = _TrainLog()
    npix = cfg.patch_size**2

    def holdout_loss() -> float:
        out = forward_batch(net, holdout_noisy)
        return float(np.mean((out - holdout_clean) ** 2))

    for step in range(1, cfg.steps + 1):
        clean = sample_patch_batch(ds, cfg.batch_size, rng)
        noisy = clean + rng.normal(0.0, cfg.sigma_r, size=clean.shape)
        out, stack = forward_batch(net, noisy, return_stack=True)
        scale = 1.0 / (cfg.batch_size * npix)
        loss = float(np.sum((out - clean) ** 2)) * scale
        if not np.isfinite(loss):
            raise DivergenceError(f"DAE training loss became non-finite at step {step}")
        upstream = 2.0 * (out - clean) * scale
        grads, _ = backward_batch(net, noisy, upstream, stack=stack)
        updater.step(grads)
        if step % cfg.log_every == 0 or step == cfg.steps:
            log.add(step, loss, holdout_loss())
        if checkpoint_every and step % checkpoint_every == 0:
            _checkpoint(checkpoint_prefix, net, step)
    net.sigma_r = cfg.sigma_r
    if log_path is not None:
        log.write(log_path)
    return net


# --- MAP denoiser training ----------------------------------------------------

def train_map_denoiser(ds: PatchDataset, dae: ConvNet, cfg: TrainConfig, log_path=None,
                       checkpoint_every: int = 0, checkpoint_prefix=None) -> ConvNet:
    """Distill the MAP denoiser D from a frozen, trained DAE.

    Inputs v are clean patches plus Gaussian noise of std 1/sqrt(rho),
    the deviation scale D will see at inference. D starts as the
    identity (zeroed final layer). The DAE is only ever run forward.
    """
    dae_fn = _dae_as_callable(dae, cfg.sigma_r)  # validate compatibility up front
    if isinstance(dae, ConvNet):
        dae_batch = lambda xs: forward_batch(dae, xs)
    else:
        dae_batch = lambda xs: np.stack([dae_fn(x) for x in xs])
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    d_net = init_weights(cfg.channels(), seed=cfg.seed + 1, zero_last=True)
    input_std = 1.0 / np.sqrt(cfg.rho)
    holdout_clean = sample_patch_batch(ds, cfg.holdout_patches, rng)
    holdout_v = holdout_clean + rng.normal(0.0, input_std, size=holdout_clean.shape)
    holdout_eta = rng.normal(0.0, cfg.sigma_r, size=holdout_clean.shape)  # frozen eval noise
    updater = _Updater(d_net, cfg)
    log = _TrainLog()
    npix = cfg.patch_size**2

    def batch_loss(v: np.ndarray, eta: np.ndarray, net: ConvNet,
                   want_grads: bool) -> tuple[float, GradientSet | None]:
        v_bar, stack = forward_batch(net, v, return_stack=True)
        v_bbar = dae_batch(v_bar + eta)
        scale = 1.0 / (v.shape[0] * npix)
        loss = (float(np.sum((v_bar - v_bbar) ** 2)) / (2 * cfg.sigma_r**2)
                + 0.5 * cfg.rho * float(np.sum((v_bar - v) ** 2))) * scale
        if not want_grads:
            return loss, None
        upstream = map_grad_vbar(v_bar, v_bbar, v, cfg.sigma_r, cfg.rho) * scale
        grads, _ = backward_batch(net, v, upstream, stack=stack)
        return loss, grads

    for step in range(1, cfg.steps + 1):
        clean = sample_patch_batch(ds, cfg.batch_size, rng)
        v = clean + rng.normal(0.0, input_std, size=clean.shape)
        eta = rng.normal(0.0, cfg.sigma_r, size=clean.shape)
        loss, grads = batch_loss(v, eta, d_net, want_grads=True)
        if not np.isfinite(loss):
            raise DivergenceError(f"MAP training loss became non-finite at step {step}")
        updater.step(grads)
        if step % cfg.log_every == 0 or step == cfg.steps:
            h, _ = batch_loss(holdout_v, holdout_eta, d_net, want_grads=False)
            log.add(step, loss, h)
        if checkpoint_every and step % checkpoint_every == 0:
            _checkpoint(checkpoint_prefix, d_net, step)
    d_net.sigma_r = cfg.sigma_r
    if log_path is not None:
        log.write(log_path)
    return d_net


def heldout_map_loss(d_net: ConvNet, dae: ConvNet, v: np.ndarray, eta: np.ndarray,
                     sigma_r: float, rho: float) -> float:
    """Per-pixel MAP loss of D on fixed inputs with fixed injected noise."""
    v_bar = forward_batch(d_net, v)
    v_bbar = forward_batch(dae, v_bar + eta)
    scale = 1.0 / v.size
    return (float(np.sum((v_bar - v_bbar) ** 2)) / (2 * sigma_r**2)
            + 0.5 * rho * float(np.sum((v_bar - v) ** 2))) * scale
