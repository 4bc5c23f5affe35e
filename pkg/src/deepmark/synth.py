"""Synthetic textured cover images for training and evaluation demos.

Any image folder works as a dataset; this generator exists so the toy
training recipe and the test suite run without downloading photo corpora.
Images mix smooth colour gradients, multi-octave value noise, and a few
geometric shapes so they carry both low- and high-frequency content.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def _value_noise(rng, size: int, octaves=(4, 8, 16), amp=0.5) -> np.ndarray:
    out = np.zeros((size, size), dtype=np.float64)
    weight = 1.0
    for cells in octaves:
        cells = min(cells, size)
        grid = rng.random((cells, cells))
        im = Image.fromarray((grid * 255).astype(np.uint8)).resize(
            (size, size), Image.BILINEAR)
        out += weight * (np.asarray(im, dtype=np.float64) / 255.0 - 0.5)
        weight *= amp
    return out


def synth_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """One H x W x 3 byte-range image."""
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    img = np.zeros((size, size, 3), dtype=np.float64)

    # smooth gradient background with a random orientation per channel
    for c in range(3):
        a, b = rng.uniform(-1, 1, 2)
        phase = rng.uniform(0, 2 * np.pi)
        img[:, :, c] = 0.5 + 0.35 * np.sin(2 * np.pi * (a * xx + b * yy) + phase)

    # a few solid shapes
    for _ in range(rng.integers(2, 6)):
        color = rng.random(3)
        cx, cy = rng.uniform(0.1, 0.9, 2)
        r = rng.uniform(0.05, 0.3)
        if rng.random() < 0.5:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2
        else:
            w, h = rng.uniform(0.05, 0.3, 2)
            mask = (np.abs(xx - cx) < w) & (np.abs(yy - cy) < h)
        img[mask] = 0.65 * img[mask] + 0.35 * color

    # shared texture plus independent fine grain per channel
    tex = _value_noise(rng, size)
    for c in range(3):
        img[:, :, c] += 0.25 * tex + 0.04 * rng.standard_normal((size, size))

    return np.clip(img * 255.0, 0.0, 255.0)


def generate_dataset(out_dir, count: int, size: int, seed: int = 0) -> list[Path]:
    """Write ``count`` synthetic PNGs named img_00000.png ... into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        arr = synth_image(rng, size).astype(np.uint8)
        p = out_dir / f"img_{i:05d}.png"
        Image.fromarray(arr).save(p)
        paths.append(p)
    return paths
