"""Shared numerics: image validation, PSNR, seeded noise and spectral-norm estimation.

Random draws come from numpy's counter-based Philox generator, whose stream is
fixed by its published algorithm and the SeedSequence key derivation, so a seed
reproduces the same bits on every platform. Gaussian samples are produced with
Box-Muller directly from the generator's 64-bit output instead of numpy's
`Generator.normal`, which is allowed to change between numpy releases.
"""

from __future__ import annotations

import hashlib
from typing import TYPE_CHECKING, Callable, Optional

import numpy as np

from unsmear.errors import NonFiniteError, ShapeError

if TYPE_CHECKING:
    from unsmear.operators import ForwardOperator

PSNR_PEAK = 255.0
POWER_ITERATIONS = 200
# Fixed sub-seed mixed into the caller's seed for the power-iteration start vector
POWER_SUBSEED = 0x5EED_0F_A11CE
MAX_SEED = 2**64 - 1


def as_image(data, name: str = "image") -> np.ndarray:
    """Validate and convert an array-like to a float64 2-D image.

    Raises:
        ShapeError: not 2-D or an empty dimension
        NonFiniteError: NaN or Inf entries
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains NaN or infinite values")
    return arr


def check_seed(seed: int) -> int:
    """Validate a 64-bit unsigned seed."""
    seed = int(seed)
    if seed < 0 or seed > MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def derive_seed(base_seed: int, *parts) -> int:
    """Combine a base seed with arbitrary labels into a reproducible 64-bit seed.

    Uses BLAKE2b over the repr of the parts (never Python's salted `hash`).
    """
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return check_seed(base_seed) ^ int.from_bytes(digest, "little")


def uniform_draws(shape, seed: int) -> np.ndarray:
    """Uniform doubles in [0, 1) from the top 53 bits of Philox output."""
    count = int(np.prod(shape))
    raw = np.random.Philox(check_seed(seed)).random_raw(count)
    return ((raw >> np.uint64(11)).astype(np.float64) * 2.0**-53).reshape(shape)


def standard_normal(shape, seed: int) -> np.ndarray:
    """Standard normal draws via Box-Muller on Philox 64-bit output."""
    count = int(np.prod(shape))
    pairs = (count + 1) // 2
    u = uniform_draws((2 * pairs,), seed)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps the log finite
    u2 = u[1::2]
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:count].reshape(shape)


def psnr(reference: np.ndarray, test: np.ndarray, peak: float = PSNR_PEAK) -> float:
    """Peak signal-to-noise ratio in dB, +inf for identical images.

    Args:
        reference: Ground-truth image
        test: Image to score
        peak: Peak value (255 for 8-bit data regardless of actual range)

    Returns:
        10*log10(peak^2 / MSE)
    """
    reference = as_image(reference, "reference")
    test = as_image(test, "test")
    if reference.shape != test.shape:
        raise ShapeError(f"psnr shape mismatch: {reference.shape} vs {test.shape}")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))


def add_gaussian_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise; deterministic per seed, never clamped."""
    img = as_image(img)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    return img + sigma * standard_normal(img.shape, seed)


def operator_norm_sq(
    op: ForwardOperator,
    iters: int = POWER_ITERATIONS,
    seed: int = 0,
    precondition: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> float:
    """Estimate sigma_max(A)^2 by power iteration on A^T A.

    The estimate is the running maximum of ||A x||^2 over unit iterates, so it
    never decreases as `iters` grows. A zero operator yields 0.

    With a symmetric `precondition` S the iteration runs on S A^T A S instead,
    giving the largest eigenvalue of that operator.
    """
    x = standard_normal(op.input_shape, check_seed(seed) ^ POWER_SUBSEED)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(max(int(iters), 1)):
        ax = op.apply(precondition(x) if precondition else x)
        estimate = max(estimate, float(np.vdot(ax, ax)))
        x = op.adjoint(ax)
        if precondition:
            x = precondition(x)
        norm = float(np.linalg.norm(x))
        if norm == 0.0:
            break
        x /= norm
    return estimate
