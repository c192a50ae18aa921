"""Synthetic 8-bit test images so sweeps run without downloaded data."""

from __future__ import annotations

from typing import Callable

import numpy as np

from unsmear.errors import DescriptorError

PHANTOM_PREFIX = "phantom:"
DEFAULT_PHANTOM_SIZE = 256


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center coordinates in [-1, 1), row then column."""
    coords = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    return np.meshgrid(coords, coords, indexing="ij")


def shapes(size: int) -> np.ndarray:
    """Flat background with a rectangle, a disk, a triangle and a thin line."""
    r, c = _grid(size)
    img = np.full((size, size), 40.0)
    img[(np.abs(r + 0.35) < 0.3) & (np.abs(c + 0.4) < 0.45)] = 200.0
    img[(r - 0.3) ** 2 + (c - 0.35) ** 2 < 0.35**2] = 120.0
    triangle = (r > -0.1) & (r < 0.75) & (np.abs(c + 0.45) < (r + 0.1) * 0.45)
    img[triangle] = 235.0
    img[np.abs(r - 0.05 + 0.3 * c) < 0.012] = 90.0
    return img


def rings(size: int) -> np.ndarray:
    """Concentric rings of alternating brightness, narrowing toward the edge."""
    r, c = _grid(size)
    radius = np.hypot(r, c)
    bands = np.floor(12.0 * radius**1.5) % 2
    return 50.0 + 160.0 * bands


def bars(size: int) -> np.ndarray:
    """Vertical bars whose period halves from top to bottom in four strips."""
    img = np.empty((size, size))
    cols = np.arange(size)
    strip = max(size // 4, 1)
    for i in range(4):
        half = max(size // (16 * 2**i), 1)
        row = np.where((cols // half) % 2 == 0, 60.0, 190.0)
        img[i * strip : (i + 1) * strip if i < 3 else size] = row
    return img


def smooth(size: int) -> np.ndarray:
    """Sum of Gaussian hills on a gentle ramp."""
    r, c = _grid(size)
    img = 60.0 + 30.0 * (c + 1.0)
    for cr, cc, width, height in (
        (-0.4, -0.3, 0.35, 110.0),
        (0.3, 0.4, 0.25, 90.0),
        (0.5, -0.5, 0.15, -40.0),
    ):
        img += height * np.exp(-((r - cr) ** 2 + (c - cc) ** 2) / (2.0 * width**2))
    return np.clip(img, 0.0, 255.0)


PHANTOMS: dict[str, Callable[[int], np.ndarray]] = {
    "shapes": shapes,
    "rings": rings,
    "bars": bars,
    "smooth": smooth,
}


def is_phantom(ref: str) -> bool:
    return ref.startswith(PHANTOM_PREFIX)


def make_phantom(ref: str, size: int = DEFAULT_PHANTOM_SIZE) -> np.ndarray:
    """Render `phantom:NAME` (or a bare NAME) at `size` x `size`."""
    name = ref[len(PHANTOM_PREFIX) :] if is_phantom(ref) else ref
    factory = PHANTOMS.get(name)
    if factory is None:
        raise DescriptorError(
            f"unknown phantom {name!r}; choose from {', '.join(sorted(PHANTOMS))}"
        )
    if size < 8:
        raise DescriptorError(f"phantom size must be >= 8, got {size}")
    return factory(size)
