"""Minimal feed-forward convolutional denoiser with exact backprop.

The architecture is a stack of 3x3 convolutions (replicate padding 1, so
output size always equals input size) with ReLU on all but the last
layer, single channel in and out. With residual=True the net predicts
the noise and returns input - stack(input), so a zeroed final layer is
exactly the identity map.

Everything is float64 numpy; convolutions run as im2col + GEMM with a
channels-last (B, H, W, C) layout internally.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

WEIGHTS_MAGIC = b"PNPD"
WEIGHTS_VERSION = 1


@dataclass
class ConvLayer:
    weights: np.ndarray  # (out_c, in_c, 3, 3)
    bias: np.ndarray     # (out_c,)
    relu: bool


@dataclass
class ConvNet:
    layers: list[ConvLayer]
    residual: bool = True
    sigma_r: float | None = None  # noise std the net was trained for

    def __post_init__(self):
        if not self.layers:
            raise ValueError("net needs at least one layer")
        if self.layers[0].weights.shape[1] != 1:
            raise ValueError("first layer must take 1 input channel")
        if self.layers[-1].weights.shape[0] != 1:
            raise ValueError("last layer must produce 1 output channel")
        if self.layers[-1].relu:
            raise ValueError("last layer must be linear")
        for i, layer in enumerate(self.layers):
            if layer.weights.shape[2:] != (3, 3):
                raise ValueError("only 3x3 kernels supported")
            if layer.bias.shape != (layer.weights.shape[0],):
                raise ValueError(f"layer {i} bias shape mismatch")
            if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.bias))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def receptive_field(self) -> int:
        return 2 * len(self.layers) + 1


@dataclass
class GradientSet:
    """Partials of a scalar w.r.t. every ConvNet parameter, shape-congruent."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def scaled(self, s: float) -> "GradientSet":
        return GradientSet([w * s for w in self.weights], [b * s for b in self.biases])

    def add_(self, other: "GradientSet") -> None:
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b

    def norm(self) -> float:
        total = 0.0
        for w in self.weights:
            total += float(np.sum(w * w))
        for b in self.biases:
            total += float(np.sum(b * b))
        return float(np.sqrt(total))


def grad_zeros(net: ConvNet) -> GradientSet:
    return GradientSet(
        [np.zeros_like(l.weights) for l in net.layers],
        [np.zeros_like(l.bias) for l in net.layers],
    )


def init_weights(channels, seed: int, residual: bool = True, zero_last: bool = False) -> ConvNet:
    """Build a net from per-layer output channel counts (last must be 1).

    Biases start at zero; weights are zero-mean Gaussian with
    std sqrt(2 / (9 * in_channels)). With zero_last=True the final layer
    is zeroed, which under residual=True makes the fresh net the
    identity map.
    """
    channels = list(channels)
    if channels[-1] != 1:
        raise ValueError("last layer must have 1 output channel")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    in_c = 1
    for i, out_c in enumerate(channels):
        std = np.sqrt(2.0 / (9.0 * in_c))
        w = rng.normal(0.0, std, size=(out_c, in_c, 3, 3))
        if zero_last and i == len(channels) - 1:
            w = np.zeros_like(w)
        layers.append(ConvLayer(w, np.zeros(out_c), relu=i < len(channels) - 1))
        in_c = out_c
    return ConvNet(layers, residual=residual)


def default_channels(n_layers: int = 7, width: int = 32) -> list[int]:
    if n_layers < 1:
        raise ValueError("need at least one layer")
    return [width] * (n_layers - 1) + [1]


# --- forward / backward ---------------------------------------------------

def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, H, W, C) -> (B*H*W, C*9) patches of the replicate-padded input."""
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)), mode="edge")
    windows = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B, H, W, C, 3, 3)
    return windows.reshape(b * h * w, c * 9)


def _layer_matrix(layer: ConvLayer) -> np.ndarray:
    # rows ordered (in_c, ky, kx) to match _im2col's (C, 3, 3) flattening
    return layer.weights.transpose(1, 2, 3, 0).reshape(-1, layer.weights.shape[0])


def _forward_stack(net: ConvNet, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run the raw conv stack on (B, H, W, C=1); returns (raw, per-layer inputs)."""
    inputs = []
    for layer in net.layers:
        inputs.append(x)
        b, h, w, _ = x.shape
        out = _im2col(x) @ _layer_matrix(layer) + layer.bias
        out = out.reshape(b, h, w, -1)
        if layer.relu:
            np.maximum(out, 0.0, out=out)
        x = out
    return x, inputs


def _backward_stack(net: ConvNet, inputs: list[np.ndarray], raw: np.ndarray,
                    outputs_grad: np.ndarray) -> tuple[GradientSet, np.ndarray]:
    """Backprop a (B, H, W, 1) upstream through the raw stack.

    `inputs` are the per-layer inputs and `raw` the stack output, both
    exactly as produced by _forward_stack: layer i's post-activation
    output is inputs[i+1] (or raw for the last layer), which supplies
    the ReLU mask without recomputing anything.
    """
    grads = grad_zeros(net)
    d = outputs_grad
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x = inputs[i]
        b, h, w, c_in = x.shape
        c_out = layer.weights.shape[0]
        if layer.relu:
            out = inputs[i + 1] if i + 1 < len(net.layers) else raw
            d = d * (out > 0.0)
        d_flat = d.reshape(b * h * w, c_out)
        cols = _im2col(x)
        grads.biases[i][:] = d_flat.sum(axis=0)
        dw = cols.T @ d_flat  # (C_in*9, C_out)
        grads.weights[i][:] = dw.reshape(c_in, 3, 3, c_out).transpose(3, 0, 1, 2)
        dcols = (d_flat @ _layer_matrix(layer).T).reshape(b, h, w, c_in, 3, 3)
        dxp = np.zeros((b, h + 2, w + 2, c_in))
        for a in range(3):
            for bb in range(3):
                dxp[:, a : a + h, bb : bb + w, :] += dcols[:, :, :, :, a, bb]
        # fold replicate padding back onto the edge pixels
        d = dxp[:, 1 : h + 1, 1 : w + 1, :].copy()
        d[:, 0, :, :] += dxp[:, 0, 1 : w + 1, :]
        d[:, -1, :, :] += dxp[:, h + 1, 1 : w + 1, :]
        d[:, :, 0, :] += dxp[:, 1 : h + 1, 0, :]
        d[:, :, -1, :] += dxp[:, 1 : h + 1, w + 1, :]
        d[:, 0, 0, :] += dxp[:, 0, 0, :]
        d[:, 0, -1, :] += dxp[:, 0, w + 1, :]
        d[:, -1, 0, :] += dxp[:, h + 1, 0, :]
        d[:, -1, -1, :] += dxp[:, h + 1, w + 1, :]
    return grads, d


def forward_batch(net: ConvNet, xs: np.ndarray, return_stack: bool = False):
    """Forward a (B, H, W) batch; returns (B, H, W).

    With return_stack=True also returns the (raw, inputs) pair that
    backward_batch can reuse to skip its own forward pass.
    """
    x = xs[:, :, :, None]
    raw, inputs = _forward_stack(net, x)
    out = x - raw if net.residual else raw
    if return_stack:
        return out[:, :, :, 0], (raw, inputs)
    return out[:, :, :, 0]


def backward_batch(net: ConvNet, xs: np.ndarray, upstream: np.ndarray,
                   stack=None) -> tuple[GradientSet, np.ndarray]:
    """Gradients of sum_b <upstream_b, forward(net, xs_b)> over params and inputs."""
    x = xs[:, :, :, None]
    if stack is None:
        raw, inputs = _forward_stack(net, x)
    else:
        raw, inputs = stack
    u = upstream[:, :, :, None]
    if net.residual:
        grads, dx_stack = _backward_stack(net, inputs, raw, -u)
        dx = u + dx_stack
    else:
        grads, dx = _backward_stack(net, inputs, raw, u)
    return grads, dx[:, :, :, 0]


def forward(net: ConvNet, img: np.ndarray) -> np.ndarray:
    """Apply the net to a single 2D image; output size equals input size."""
    return forward_batch(net, img[None])[0]


def backward(net: ConvNet, img: np.ndarray, upstream: np.ndarray) -> tuple[GradientSet, np.ndarray]:
    """Exact gradients of <upstream, forward(net, img)> w.r.t. params and input."""
    if upstream.shape != img.shape:
        raise ValueError(f"upstream shape {upstream.shape} != image shape {img.shape}")
    grads, dx = backward_batch(net, img[None], upstream[None])
    return grads, dx[0]


def forward_activations(net: ConvNet, img: np.ndarray) -> list[np.ndarray]:
    """Per-layer post-activation feature maps for a single image (diagnostics)."""
    x = img[None, :, :, None]
    acts = []
    for layer in net.layers:
        b, h, w, _ = x.shape
        out = (_im2col(x) @ _layer_matrix(layer) + layer.bias).reshape(b, h, w, -1)
        if layer.relu:
            np.maximum(out, 0.0, out=out)
        acts.append(out[0])
        x = out
    return acts


# --- weight files ---------------------------------------------------------

def save_weights(path, net: ConvNet) -> None:
    """Versioned binary container; little-endian float32 parameters."""
    from .image import atomic_write_bytes

    sigma = float("nan") if net.sigma_r is None else float(net.sigma_r)
    parts = [
        WEIGHTS_MAGIC,
        struct.pack("<IBd I", WEIGHTS_VERSION, 1 if net.residual else 0, sigma, len(net.layers)),
    ]
    for layer in net.layers:
        out_c, in_c = layer.weights.shape[:2]
        parts.append(struct.pack("<IIB", out_c, in_c, 1 if layer.relu else 0))
    for layer in net.layers:
        parts.append(layer.weights.astype("<f4").tobytes())
        parts.append(layer.bias.astype("<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_weights(path) -> ConvNet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != WEIGHTS_MAGIC:
        raise ValueError(f"not a weight file: {path}")
    head = struct.Struct("<IBd I")
    version, residual, sigma, n_layers = head.unpack_from(data, 4)
    if version != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weight file version {version}")
    offset = 4 + head.size
    dims = []
    layer_head = struct.Struct("<IIB")
    for _ in range(n_layers):
        dims.append(layer_head.unpack_from(data, offset))
        offset += layer_head.size
    layers = []
    for out_c, in_c, relu in dims:
        n_w = out_c * in_c * 9
        w = np.frombuffer(data, dtype="<f4", count=n_w, offset=offset).astype(np.float64)
        offset += 4 * n_w
        b = np.frombuffer(data, dtype="<f4", count=out_c, offset=offset).astype(np.float64)
        offset += 4 * out_c
        layers.append(ConvLayer(w.reshape(out_c, in_c, 3, 3), b, relu=bool(relu)))
    return ConvNet(layers, residual=bool(residual), sigma_r=None if np.isnan(sigma) else float(sigma))
