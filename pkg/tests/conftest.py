"""Shared fixtures: the synthetic desk dataset and the trained net pair.

Training the desk-scale nets dominates the suite's runtime, so they are
session-scoped. Set PNP_TEST_CACHE=<dir> to reuse weights across pytest
invocations during development; training is deterministic, so cached
weights are bit-identical to freshly trained ones for the same configs.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from pnprestore.image import read_pgm
from pnprestore.net import load_weights, save_weights
from pnprestore.synthdata import generate_desk_data
from pnprestore.training import TrainConfig, dataset_from_files, train_dae, train_map_denoiser

CACHE_ENV = "PNP_TEST_CACHE"

# Desk-scale training configuration used by the acceptance criteria.
# Plain SGD (the library default) converges far too slowly for the CPU
# time budget  (measured: holdout MSE 49 -> 35 after 120 steps at lr
# 1e-4, vs 49 -> 16 with adam), so the suite trains with adam.
DESK_DAE_CONFIG = TrainConfig(sigma_r=7.0, steps=1200, optimizer="adam",
                              learning_rate=1e-3, seed=11, log_every=50)
DESK_MAP_CONFIG = TrainConfig(sigma_r=7.0, steps=1000, optimizer="adam",
                              learning_rate=1e-3, seed=12, log_every=50)


def _train_cached(name: str, train_fn):
    cache = os.environ.get(CACHE_ENV)
    if cache:
        path = Path(cache) / f"{name}.bin"
        if path.exists():
            return load_weights(path)
    net = train_fn()
    if cache:
        Path(cache).mkdir(parents=True, exist_ok=True)
        save_weights(Path(cache) / f"{name}.bin", net)
    return net


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory) -> dict[str, list[str]]:
    root = tmp_path_factory.mktemp("desk-data")
    return generate_desk_data(root, n_train=8, n_test=10, size=128, seed=0)


@pytest.fixture(scope="session")
def desk_patches(desk_data):
    return dataset_from_files(desk_data["train"], 40, stride=24)


@pytest.fixture(scope="session")
def desk_dae(desk_patches):
    return _train_cached("desk_dae", lambda: train_dae(desk_patches, DESK_DAE_CONFIG))


@pytest.fixture(scope="session")
def desk_map(desk_patches, desk_dae):
    return _train_cached(
        "desk_map", lambda: train_map_denoiser(desk_patches, desk_dae, DESK_MAP_CONFIG))


@pytest.fixture(scope="session")
def test_images(desk_data) -> list[np.ndarray]:
    return [read_pgm(p) for p in desk_data["test"]]


@pytest.fixture(scope="session")
def test_crops(test_images) -> list[np.ndarray]:
    """The 20 desk test crops: two 96x96 views of each 128x128 test image."""
    crops = []
    for img in test_images:
        crops.append(img[:96, :96].copy())
        crops.append(img[32:, 32:].copy())
    return crops


# --- acceptance reporting ----------------------------------------------------

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, description: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    line = f"[ACCEPTANCE {number:02d}] {status} - {description}"
    if detail:
        line += f" ({detail})"
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
