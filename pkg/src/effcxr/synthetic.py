"""Synthetic chest-image stand-ins with strong per-class structure.

Real radiographs cannot ship with the repo, so tests and demos use generated
grayscale images whose brightness and blob layout differ sharply by class:
class 0 is dark with a single upper-left mass, class 1 mid-gray with a lower
band, class 2 bright with two opposing masses.  The classes are linearly
separable from pooled features, which keeps toy-scale training honest.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import LABELS, ManifestEntry, save_image

# (base brightness, blob centers as (y, x) fractions)
_CLASS_PATTERNS = {
    0: (0.20, ((0.30, 0.30),)),
    1: (0.50, ((0.72, 0.50),)),
    2: (0.80, ((0.28, 0.72), (0.72, 0.28))),
}

_SOURCE_FOR_LABEL = {
    "Normal": "RSNA",
    "Pneumonia": "RSNA",
    "COVID19": "COVIDCollection",
}


def synth_pixels(class_index: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """One (size, size) float image in [0, 1] for the given class."""
    if class_index not in _CLASS_PATTERNS:
        raise ValueError(f"class_index must be one of {sorted(_CLASS_PATTERNS)}")
    base, centers = _CLASS_PATTERNS[class_index]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.full((size, size), base)
    sigma = 0.14 * size
    for cy, cx in centers:
        d2 = (yy - cy * size) ** 2 + (xx - cx * size) ** 2
        img += 0.22 * np.exp(-d2 / (2.0 * sigma**2))
    img += rng.normal(0.0, 0.03, size=(size, size))
    return np.clip(img, 0.0, 1.0)


def write_synthetic_images(
    directory,
    per_class: int | dict[str, int],
    size: int = 64,
    seed: int = 0,
    partition: str = "train",
) -> list[ManifestEntry]:
    """Write PNG files under ``directory`` and return their manifest rows."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(per_class, int):
        per_class = {label: per_class for label in LABELS}
    rng = np.random.default_rng(seed)
    entries: list[ManifestEntry] = []
    for class_index, label in enumerate(LABELS):
        for i in range(per_class.get(label, 0)):
            name = f"{partition}_{label.lower()}_{i:04d}.png"
            path = directory / name
            save_image(synth_pixels(class_index, size, rng), path)
            entries.append(
                ManifestEntry(
                    path=str(path),
                    label=label,
                    source=_SOURCE_FOR_LABEL[label],
                    partition=partition,
                )
            )
    return entries


def fake_entries(
    count: int, label: str, source: str, prefix: str = "images"
) -> list[ManifestEntry]:
    """Path-only rows (no files) for exercising manifest logic at full scale."""
    return [
        ManifestEntry(
            path=f"{prefix}/{label.lower()}_{i:06d}.png",
            label=label,
            source=source,
            partition="train",
        )
        for i in range(count)
    ]
