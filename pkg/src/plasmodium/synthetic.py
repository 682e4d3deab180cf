"""Synthetic stand-in corpus for exercising the pipeline without the NIH
download: pink cell bodies on a pale background, with small dark chromatin
blobs drawn inside parasitized cells. Not real data; the CLI prints the
NIH citation when a real corpus is required.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .dataset import LabeledImage

# top-left, top-right, bottom-left, bottom-right
QUADRANTS = {"tl": (0, 0), "tr": (0, 1), "bl": (1, 0), "br": (1, 1)}


def cell_image(
    rng: np.random.Generator,
    parasitized: bool,
    size: int = 96,
    quadrant: str | None = None,
) -> np.ndarray:
    """One synthetic cell crop as (size, size, 3) uint8.

    ``quadrant`` confines the parasite blobs to one quarter of the image,
    which gives saliency tests a known signal location.
    """
    img = np.full((size, size, 3), 0, dtype=np.float32)
    bg = rng.uniform(225, 245)
    img[..., :] = bg + rng.normal(0, 2.0, size=(size, size, 1))

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    cy = size / 2 + rng.uniform(-size * 0.05, size * 0.05)
    cx = size / 2 + rng.uniform(-size * 0.05, size * 0.05)
    ry = size * rng.uniform(0.32, 0.42)
    rx = size * rng.uniform(0.32, 0.42)
    theta = rng.uniform(0, np.pi)
    yr = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
    xr = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
    inside = (yr / ry) ** 2 + (xr / rx) ** 2 <= 1.0

    cell_rgb = np.array([rng.uniform(210, 235), rng.uniform(150, 180), rng.uniform(160, 190)])
    texture = rng.normal(0, 4.0, size=(size, size))
    for c in range(3):
        img[..., c] = np.where(inside, cell_rgb[c] + texture, img[..., c])

    if parasitized:
        n_blobs = int(rng.integers(1, 4))
        blob_rgb = np.array([rng.uniform(70, 110), rng.uniform(30, 60), rng.uniform(110, 150)])
        for _ in range(n_blobs):
            if quadrant is not None:
                qy, qx = QUADRANTS[quadrant]
                by = rng.uniform(size * (0.12 + 0.5 * qy), size * (0.38 + 0.5 * qy))
                bx = rng.uniform(size * (0.12 + 0.5 * qx), size * (0.38 + 0.5 * qx))
            else:
                ang = rng.uniform(0, 2 * np.pi)
                rad = rng.uniform(0, 0.7)
                by = cy + rad * ry * np.sin(ang)
                bx = cx + rad * rx * np.cos(ang)
            br = size * rng.uniform(0.06, 0.12)
            blob = (yy - by) ** 2 + (xx - bx) ** 2 <= br**2
            for c in range(3):
                img[..., c] = np.where(blob, blob_rgb[c], img[..., c])

    img += rng.normal(0, 1.5, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def synthesize_corpus(
    root: Path | str,
    per_class: int,
    seed: int = 0,
    size: int = 96,
    quadrant: str | None = None,
) -> Path:
    """Write a class-per-directory PNG corpus and return its root."""
    root = Path(root)
    for label, name in enumerate(("Uninfected", "Parasitized")):
        directory = root / name
        directory.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            rng = np.random.default_rng([seed, label, i])
            arr = cell_image(rng, parasitized=bool(label), size=size, quadrant=quadrant)
            Image.fromarray(arr).save(directory / f"cell_{i:05d}.png")
    return root


def probe_images(count: int, size: int, seed: int = 20) -> list[LabeledImage]:
    """Deterministic in-memory probe set (half parasitized, half not)."""
    out = []
    for i in range(count):
        label = i % 2
        rng = np.random.default_rng([seed, label, i])
        arr = cell_image(rng, parasitized=bool(label), size=size)
        out.append(LabeledImage.from_array(arr, label=label, source_path=f"probe://{i:02d}"))
    return out
