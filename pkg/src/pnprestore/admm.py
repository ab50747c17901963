"""Plug-and-play ADMM drivers for deblurring and inpainting.

Each iteration performs, in order:

    1. x_hat = argmin_x 1/(2 sigma^2) ||A x - y||^2 + rho/2 ||x - (z_hat - lambda)||^2
    2. z_hat = denoiser(x_hat + lambda)
    3. lambda = lambda + (x_hat - z_hat)

For deblurring, A is circular convolution on the replicate-padded frame
and step 1 is the closed-form frequency-domain solve; the pad margins of
the observation are re-synthesized from the current iterate before each
solve so the circular model stays faithful to the valid-area data. For
inpainting, A is the observation mask and step 1 uses gradient descent
(or the exact per-pixel solve on request).

rho stays fixed across iterations; iterates are never clipped until the
final output, which is clipped to [0, 255].
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .convolve import conv2d_valid
from .errors import DivergenceError
from .image import as_image, pad_replicate
from .metrics import psnr
from .net import ConvNet, forward
from .solver import (
    FftSolverPlan,
    build_plan,
    estimate_boundary,
    pad_margins,
    solve_data_fft,
    solve_data_gd,
    solve_data_mask_exact,
    valid_slices,
)


# --- denoisers ---------------------------------------------------------------

class Denoiser:
    """Interface: denoise(v) -> image of the same shape, plus a descriptor."""

    descriptor: str = "denoiser"

    def denoise(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class IdentityDenoiser(Denoiser):
    descriptor = "identity"

    def denoise(self, v: np.ndarray) -> np.ndarray:
        return np.array(v, dtype=float, copy=True)


class MedianDenoiser(Denoiser):
    """Median filter over a square window with replicate borders."""

    def __init__(self, window: int = 3):
        if window < 1 or window % 2 == 0:
            raise ValueError("window must be a positive odd integer")
        self.window = window
        self.descriptor = f"median{window}"

    def denoise(self, v: np.ndarray) -> np.ndarray:
        v = as_image(v)
        h = self.window // 2
        padded = pad_replicate(v, h, h, h, h)
        wins = np.lib.stride_tricks.sliding_window_view(padded, (self.window, self.window))
        return np.median(wins, axis=(2, 3))


class NetDenoiser(Denoiser):
    """Wraps a trained network as the plug-and-play prior."""

    def __init__(self, net: ConvNet):
        self.net = net
        sr = "?" if net.sigma_r is None else f"{net.sigma_r:g}"
        width = max(layer.weights.shape[0] for layer in net.layers)
        self.descriptor = f"net{len(net.layers)}x{width}-sr{sr}"

    def denoise(self, v: np.ndarray) -> np.ndarray:
        return forward(self.net, v)


# --- state and configuration --------------------------------------------------

@dataclass
class TraceEntry:
    iteration: int
    primal_residual: float
    psnr: float | None
    wall_ms: float


@dataclass
class RestoreConfig:
    sigma_r: float = 7.0
    rho: float = 1.0 / 49.0
    iterations: int = 75
    denoiser: Denoiser = field(default_factory=IdentityDenoiser)
    track_truth: np.ndarray | None = None
    inpaint_solver: str = "gd"  # "gd" | "exact"
    gd_steps: int = 200

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.sigma_r <= 0:
            raise ValueError("sigma_r must be positive")
        if self.inpaint_solver not in ("gd", "exact"):
            raise ValueError(f"unknown inpaint solver {self.inpaint_solver!r}")
        if self.gd_steps < 1:
            raise ValueError("gd_steps must be >= 1")


@dataclass
class AdmmState:
    x_hat: np.ndarray
    z_hat: np.ndarray
    lam: np.ndarray
    rho: float
    iteration: int = 0
    trace: list[TraceEntry] = field(default_factory=list)

    def __post_init__(self):
        if not (self.x_hat.shape == self.z_hat.shape == self.lam.shape):
            raise ValueError("x_hat, z_hat, lambda must share dimensions")


def _check_finite_iterates(state: AdmmState) -> None:
    for name, a in (("x_hat", state.x_hat), ("z_hat", state.z_hat), ("lambda", state.lam)):
        if not np.all(np.isfinite(a)):
            raise DivergenceError(
                f"{name} became non-finite at iteration {state.iteration}"
            )


def _apply_denoiser(denoiser: Denoiser, v: np.ndarray) -> np.ndarray:
    out = denoiser.denoise(v)
    if out.shape != v.shape:
        raise ValueError(
            f"denoiser {denoiser.descriptor!r} changed shape {v.shape} -> {out.shape}"
        )
    return out


# --- deblurring ----------------------------------------------------------------

def admm_step_deblur(state: AdmmState, plan: FftSolverPlan, y_valid: np.ndarray,
                     k: np.ndarray, denoiser: Denoiser,
                     truth_valid: np.ndarray | None = None,
                     data_solver: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None = None,
                     ) -> AdmmState:
    """One ADMM iteration: boundary re-estimation, data solve, denoise, dual update.

    `data_solver(y_full, z_hat, lam)` overrides the frequency-domain
    solve (used to swap in the dense oracle during testing).
    """
    if plan.shape != state.x_hat.shape:
        raise ValueError(f"plan shape {plan.shape} does not match state {state.x_hat.shape}")
    t0 = time.perf_counter()
    y_full = estimate_boundary(state.x_hat, k, y_valid)
    if data_solver is None:
        x_hat = solve_data_fft(plan, y_full, state.z_hat, state.lam)
    else:
        x_hat = data_solver(y_full, state.z_hat, state.lam)
    z_hat = _apply_denoiser(denoiser, x_hat + state.lam)
    lam = state.lam + (x_hat - z_hat)
    state.x_hat, state.z_hat, state.lam = x_hat, z_hat, lam
    state.iteration += 1
    _check_finite_iterates(state)
    wall_ms = (time.perf_counter() - t0) * 1e3
    entry_psnr = None
    if truth_valid is not None:
        vs = valid_slices(k, state.x_hat.shape)
        entry_psnr = psnr(np.clip(state.x_hat[vs], 0.0, 255.0), truth_valid)
    state.trace.append(TraceEntry(
        iteration=state.iteration,
        primal_residual=float(np.linalg.norm(state.x_hat - state.z_hat)),
        psnr=entry_psnr,
        wall_ms=wall_ms,
    ))
    return state


def _truth_on_valid(truth: np.ndarray | None, k: np.ndarray,
                    full_shape: tuple[int, int], valid_shape: tuple[int, int]) -> np.ndarray | None:
    if truth is None:
        return None
    truth = as_image(truth)
    if truth.shape == full_shape:
        return truth[valid_slices(k, full_shape)]
    if truth.shape == valid_shape:
        return truth
    raise ValueError(
        f"truth shape {truth.shape} matches neither the padded frame {full_shape} "
        f"nor the observation {valid_shape}"
    )


def restore_deblur(y: np.ndarray, k: np.ndarray, sigma: float,
                   cfg: RestoreConfig) -> tuple[np.ndarray, list[TraceEntry]]:
    """Deblur a valid-area observation; returns (restored image, trace).

    The restored image has y's size (the valid region of the padded
    iterate) and is clipped to [0, 255]. The trace holds one entry per
    iteration.
    """
    y = as_image(y)
    k = as_image(k)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    top, bottom, left, right = pad_margins(k)
    x0 = pad_replicate(y, top, bottom, left, right)
    full_shape = x0.shape
    plan = build_plan(k, full_shape[0], full_shape[1], sigma, cfg.rho)
    truth_valid = _truth_on_valid(cfg.track_truth, k, full_shape, y.shape)
    state = AdmmState(x_hat=x0.copy(), z_hat=x0.copy(),
                      lam=np.zeros(full_shape), rho=cfg.rho)
    for _ in range(cfg.iterations):
        admm_step_deblur(state, plan, y, k, cfg.denoiser, truth_valid=truth_valid)
    out = np.clip(state.x_hat[valid_slices(k, full_shape)], 0.0, 255.0)
    return out, state.trace


# --- inpainting -----------------------------------------------------------------

def median_fill(y: np.ndarray, mask: np.ndarray, window: int = 3,
                passes: int | None = None) -> np.ndarray:
    """Fill missing pixels with the median of known neighbors, pass by pass.

    Known means observed or filled in an earlier pass. Raises if pixels
    remain unfilled once `passes` (default: enough for any connected
    mask) are exhausted or a pass makes no progress.
    """
    y = as_image(y)
    mask = as_image(mask)
    if mask.shape != y.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {y.shape}")
    if not np.all((mask == 0.0) | (mask == 1.0)):
        raise ValueError("mask must be exactly 0/1")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    if passes is None:
        passes = y.shape[0] + y.shape[1]
    filled = y.copy()
    known = mask > 0
    filled[~known] = np.nan
    h = window // 2
    for _ in range(passes):
        if known.all():
            break
        padded = np.pad(filled, h, mode="constant", constant_values=np.nan)
        wins = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
        wins = wins.reshape(y.shape[0], y.shape[1], window * window)
        counts = np.count_nonzero(~np.isnan(wins), axis=2)
        ready = (~known) & (counts > 0)
        if not ready.any():
            raise ValueError("median fill stalled: no missing pixel has a known neighbor")
        filled[ready] = np.nanmedian(wins[ready], axis=1)
        known |= ready
    if not known.all():
        raise ValueError(f"median fill incomplete after {passes} passes")
    return filled


def restore_inpaint(y: np.ndarray, mask: np.ndarray, sigma: float,
                    cfg: RestoreConfig) -> tuple[np.ndarray, list[TraceEntry]]:
    """Inpaint masked observations; returns (restored image, trace).

    Initialized by median fill. The data solve is 200-step gradient
    descent by default (cfg.inpaint_solver="exact" switches to the
    per-pixel closed form; sigma=0 always uses the exact form, where it
    reduces to keeping observed pixels).
    """
    y = as_image(y)
    mask = as_image(mask)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x0 = median_fill(y, mask)
    truth = None
    if cfg.track_truth is not None:
        truth = as_image(cfg.track_truth)
        if truth.shape != y.shape:
            raise ValueError(f"truth shape {truth.shape} does not match image {y.shape}")
    state = AdmmState(x_hat=x0.copy(), z_hat=x0.copy(),
                      lam=np.zeros(y.shape), rho=cfg.rho)
    use_exact = cfg.inpaint_solver == "exact" or sigma == 0.0
    for _ in range(cfg.iterations):
        t0 = time.perf_counter()
        if use_exact:
            x_hat = solve_data_mask_exact(y, mask, sigma, cfg.rho, state.z_hat, state.lam)
        else:
            x_hat = solve_data_gd(y, mask, sigma, cfg.rho, state.z_hat, state.lam,
                                  steps=cfg.gd_steps)
        z_hat = _apply_denoiser(cfg.denoiser, x_hat + state.lam)
        state.lam = state.lam + (x_hat - z_hat)
        state.x_hat, state.z_hat = x_hat, z_hat
        state.iteration += 1
        _check_finite_iterates(state)
        wall_ms = (time.perf_counter() - t0) * 1e3
        entry_psnr = None
        if truth is not None:
            entry_psnr = psnr(np.clip(state.x_hat, 0.0, 255.0), truth)
        state.trace.append(TraceEntry(
            iteration=state.iteration,
            primal_residual=float(np.linalg.norm(state.x_hat - state.z_hat)),
            psnr=entry_psnr,
            wall_ms=wall_ms,
        ))
    out = np.clip(state.x_hat, 0.0, 255.0)
    return out, state.trace


# --- trace serialization ----------------------------------------------------------

TRACE_HEADER = "iter,primal_residual,psnr,wall_ms"


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6g}"


def export_trace(trace: list[TraceEntry]) -> str:
    """Render a trace as CSV text (6 significant digits, empty psnr if untracked)."""
    lines = [TRACE_HEADER]
    for e in trace:
        cell = "" if e.psnr is None else _fmt(e.psnr)
        lines.append(f"{e.iteration},{_fmt(e.primal_residual)},{cell},{_fmt(e.wall_ms)}")
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> list[TraceEntry]:
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError("trace CSV missing expected header")
    out = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != 4:
            raise ValueError(f"malformed trace row: {ln!r}")
        out.append(TraceEntry(
            iteration=int(cells[0]),
            primal_residual=float(cells[1]),
            psnr=None if cells[2] == "" else float(cells[2]),
            wall_ms=float(cells[3]),
        ))
    return out
