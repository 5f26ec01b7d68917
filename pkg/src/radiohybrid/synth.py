"""Synthetic four-class texture dataset in the ``<root>/<split>/<class>/*.pgm`` layout.

Class textures, in class-table order: oriented sinusoidal gratings, Gaussian
blobs, i.i.d. noise, constant fields. Useful for smoke runs without MRI data.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .imgio import CLASS_NAMES, encode_pgm

__all__ = ["grating", "blobs", "noise", "constant", "make_dataset", "GENERATORS"]


def grating(rng: np.random.Generator, size: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    phi = rng.uniform(0.0, np.pi)
    period = rng.uniform(5.0, 12.0)
    wave = np.sin(2.0 * np.pi * (x * np.cos(phi) + y * np.sin(phi)) / period + rng.uniform(0, 2 * np.pi))
    img = 128.0 + rng.uniform(60.0, 110.0) * wave + rng.normal(0.0, 6.0, (size, size))
    return np.clip(img, 0, 255)


def blobs(rng: np.random.Generator, size: int) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size), rng.uniform(10.0, 50.0))
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0, size, 2)
        s = rng.uniform(size / 16, size / 8)
        img += rng.uniform(80.0, 180.0) * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * s * s))
    img += rng.normal(0.0, 3.0, (size, size))
    return np.clip(img, 0, 255)


def noise(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.uniform(0.0, 255.0, (size, size))


def constant(rng: np.random.Generator, size: int) -> np.ndarray:
    return np.full((size, size), float(rng.integers(0, 256)))


GENERATORS = (grating, blobs, noise, constant)


def make_dataset(root, n_train: int = 75, n_test: int = 25, size: int = 64, seed: int = 0) -> Path:
    """Write ``n_train``/``n_test`` images per class under ``root/Training`` and ``root/Testing``."""
    root = Path(root)
    for s_idx, (split, count) in enumerate((("Training", n_train), ("Testing", n_test))):
        for label, (name, gen) in enumerate(zip(CLASS_NAMES, GENERATORS)):
            d = root / split / name
            d.mkdir(parents=True, exist_ok=True)
            rng = np.random.Generator(np.random.Philox(key=[seed, 16 * s_idx + label]))
            for i in range(count):
                (d / f"{name}_{i:04d}.pgm").write_bytes(encode_pgm(gen(rng, size)))
    return root
