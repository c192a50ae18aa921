"""The denoise(x, lambda) step: transform thresholding, the oracle rule, external tools."""

from __future__ import annotations

import logging
import shlex
import shutil
import subprocess
import tempfile
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Union

import numpy as np

from unsmear.errors import DenoiserError, ImageFormatError, ShapeError
from unsmear.fileio import read_fidb, write_fidb
from unsmear.models import DEFAULT_EXTERNAL_TIMEOUT, BasisKind, DenoiserKind, DenoiserSpec
from unsmear.numerics import as_image
from unsmear.transforms import (
    OrthoBasis,
    make_canonical_basis,
    make_dft_basis,
    make_wavelet_basis,
)

logger = logging.getLogger(__name__)

BRIDGE_DIR_PREFIX = "unsmear-bridge-"
# Characters of stderr kept in bridge error messages
STDERR_TAIL = 500


def soft_threshold(v, lam):
    """sign(v) * max(0, |v| - lam); complex values shrink in magnitude.

    `lam` may be a scalar or an array broadcastable against `v`.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v)
    if np.iscomplexobj(v):
        mag = np.abs(v)
        scale = np.zeros_like(mag)
        np.divide(np.maximum(mag - lam, 0.0), mag, out=scale, where=mag > 0)
        out = v * scale
    else:
        v = v.astype(np.float64, copy=False)
        out = np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
    return out.item() if out.ndim == 0 else out


def hard_threshold(v, lam):
    """Keep entries with |v| > lam, zero the rest."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("threshold must be >= 0")
    v = np.asarray(v)
    out = np.where(np.abs(v) > lam, v, np.zeros_like(v))
    return out.item() if out.ndim == 0 else out


def format_lambda(lam: float) -> str:
    """Shortest decimal string that reads back as the same double."""
    return np.format_float_positional(float(lam), trim="-")


class Denoiser(ABC):
    """A map (x, lambda_gamma) -> image of the same shape."""

    kind: DenoiserKind

    def denoise(self, x: np.ndarray, lambda_gamma: float) -> np.ndarray:
        x = as_image(x, "denoiser input")
        if lambda_gamma < 0:
            raise ValueError(f"lambda_gamma must be >= 0, got {lambda_gamma}")
        out = self._denoise(x, float(lambda_gamma))
        if out.shape != x.shape:
            raise ShapeError(f"{self.describe()}: output shape {out.shape} != {x.shape}")
        return out

    __call__ = denoise

    @abstractmethod
    def _denoise(self, x: np.ndarray, lambda_gamma: float) -> np.ndarray: ...

    @abstractmethod
    def describe(self) -> str: ...

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.describe()}>"


class ThresholdDenoiser(Denoiser):
    """Threshold the coefficients of an orthogonal basis and synthesize back.

    With the soft rule this is the prox of lambda * ||Psi^T x||_1. The coarsest
    approximation band is left untouched unless `include_coarse` is set.
    """

    def __init__(self, basis: OrthoBasis, rule: str = "soft", include_coarse: bool = False):
        if rule not in ("soft", "hard"):
            raise ValueError(f"threshold rule must be 'soft' or 'hard', got {rule!r}")
        self.basis = basis
        self.rule = rule
        self.include_coarse = include_coarse
        self.kind = DenoiserKind.WAVELET_SOFT if rule == "soft" else DenoiserKind.WAVELET_HARD
        self._keep = None if include_coarse else basis.coarse_mask()

    def _denoise(self, x: np.ndarray, lambda_gamma: float) -> np.ndarray:
        if lambda_gamma == 0.0:
            return x.copy()
        coeffs = self.basis.analyze(x)
        shrink = soft_threshold if self.rule == "soft" else hard_threshold
        out = shrink(coeffs, lambda_gamma)
        if self._keep is not None:
            out[self._keep] = coeffs[self._keep]
        return self.basis.synthesize(out)

    def describe(self) -> str:
        coarse = ",coarse" if self.include_coarse else ""
        return f"{self.rule}-threshold[{self.basis.describe()}{coarse}]"


class ExternalDenoiser(Denoiser):
    """Bridge to a black-box executable: `command <input.fidb> <output.fidb> <lambda>`.

    Every call runs in a fresh temporary directory, removed on success and kept
    for inspection on failure.
    """

    kind = DenoiserKind.EXTERNAL

    def __init__(
        self, command: Union[str, list[str]], timeout: float = DEFAULT_EXTERNAL_TIMEOUT
    ):
        args = shlex.split(command) if isinstance(command, str) else list(command)
        if not args:
            raise ValueError("external denoiser needs a command")
        if timeout <= 0:
            raise ValueError(f"timeout must be > 0, got {timeout}")
        self.args = args
        self.timeout = float(timeout)

    def _denoise(self, x: np.ndarray, lambda_gamma: float) -> np.ndarray:
        workdir = Path(tempfile.mkdtemp(prefix=BRIDGE_DIR_PREFIX))
        src = workdir / "input.fidb"
        dst = workdir / "output.fidb"
        write_fidb(x, src)
        argv = [*self.args, str(src), str(dst), format_lambda(lambda_gamma)]
        logger.debug("bridge call: %s", shlex.join(argv))

        try:
            result = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
        except subprocess.TimeoutExpired as e:
            raise DenoiserError(
                f"{self.args[0]} timed out after {self.timeout:g} s (files kept in {workdir})"
            ) from e
        except OSError as e:
            raise DenoiserError(f"cannot run {self.args[0]}: {e}") from e

        if result.returncode != 0:
            tail = (result.stderr or "").strip()[-STDERR_TAIL:]
            raise DenoiserError(
                f"{self.args[0]} exited with code {result.returncode}"
                + (f": {tail}" if tail else "")
                + f" (files kept in {workdir})"
            )
        if not dst.exists():
            raise DenoiserError(f"{self.args[0]} wrote no output file (files kept in {workdir})")
        try:
            out = read_fidb(dst)
        except ImageFormatError as e:
            raise DenoiserError(f"{self.args[0]} wrote a malformed output: {e}") from e
        if out.shape != x.shape:
            raise DenoiserError(
                f"{self.args[0]} returned shape {out.shape}, expected {x.shape} "
                f"(files kept in {workdir})"
            )
        if not np.all(np.isfinite(out)):
            raise DenoiserError(f"{self.args[0]} returned non-finite values")

        shutil.rmtree(workdir, ignore_errors=True)
        return out

    def describe(self) -> str:
        return f"external[{shlex.join(self.args)}]"


def oracle_denoise(y: np.ndarray, x_true: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Keep y_i when the coefficient SNR x_i^2 * delta_i^2 exceeds 1, else 0.

    Works on arrays of any (matching) shape; pixels with delta_i = 0 are killed.
    Noise variance is assumed normalized to 1.
    """
    y = np.asarray(y, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    if not (y.shape == x_true.shape == deltas.shape):
        raise ShapeError(
            f"oracle shapes differ: y {y.shape}, x_true {x_true.shape}, deltas {deltas.shape}"
        )
    if np.any(deltas < 0):
        raise ValueError("deltas must be nonnegative")
    keep = (deltas > 0) & (x_true**2 * deltas**2 > 1.0)
    return np.where(keep, y, 0.0)


def build_denoiser(spec: DenoiserSpec, shape: tuple[int, int]) -> Denoiser:
    """Instantiate a denoiser descriptor for images of `shape`."""
    if spec.kind == DenoiserKind.EXTERNAL:
        return ExternalDenoiser(spec.cmd, timeout=spec.timeout)
    if spec.basis == BasisKind.WAVELET:
        basis = make_wavelet_basis(shape, taps=spec.taps, levels=spec.levels)
    elif spec.basis == BasisKind.DFT:
        basis = make_dft_basis(shape)
    else:
        basis = make_canonical_basis(shape)
    rule = "soft" if spec.kind == DenoiserKind.WAVELET_SOFT else "hard"
    return ThresholdDenoiser(basis, rule=rule, include_coarse=spec.include_coarse)
