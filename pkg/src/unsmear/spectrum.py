"""Atom attenuations Delta (delta_j = ||A psi_j||) and the gradient filter Psi W Psi^T."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from unsmear.errors import ShapeError, SpectrumError
from unsmear.models import SpectrumMode, Strategy
from unsmear.operators import ConvolutionOperator, ForwardOperator, GainOperator
from unsmear.transforms import CanonicalBasis, DFTBasis, OrthoBasis, SVDBasis, WaveletBasis

logger = logging.getLogger(__name__)

DEFAULT_ZERO_TOL = 1e-12
# Wiener tau of wavelet-basis FIDA; every weight is then at most 1/(2 sqrt(tau))
WAVELET_WIENER_TAU = 1e-2
# Exact strategy costs one operator application per atom
EXACT_STRATEGY_MAX_PIXELS = 256 * 256
EXACT_CHUNK = 512


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Diagonal Delta of the factorization A^T Phi = Psi Delta for one basis, plus weights."""

    deltas: np.ndarray
    basis_id: str
    strategy: Strategy = Strategy.EXACT
    mode: SpectrumMode = SpectrumMode.PINV
    tau: Optional[float] = None
    zero_tol: float = DEFAULT_ZERO_TOL
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        deltas = np.array(self.deltas, dtype=np.float64, copy=True)
        if np.any(deltas < 0) or not np.all(np.isfinite(deltas)):
            raise SpectrumError("deltas must be finite and nonnegative")
        if self.zero_tol < 0:
            raise SpectrumError(f"zero_tol must be >= 0, got {self.zero_tol}")
        if self.mode == SpectrumMode.WIENER and (self.tau is None or self.tau <= 0):
            raise SpectrumError("wiener mode needs tau > 0")
        deltas.setflags(write=False)
        object.__setattr__(self, "deltas", deltas)
        weights = _weights(deltas, self.support, self.mode, self.tau)
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def threshold(self) -> float:
        """Deltas at or below this value count as zero."""
        peak = float(self.deltas.max()) if self.deltas.size else 0.0
        return self.zero_tol * peak

    @property
    def support(self) -> np.ndarray:
        """Mask of recoverable coefficients (delta above threshold)."""
        return self.deltas > self.threshold

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.weights == 1.0))

    def lipschitz(self) -> float:
        """Largest curvature w_j * delta_j^2 of the filtered data term."""
        return float(np.max(self.weights * self.deltas**2)) if self.deltas.size else 0.0

    def reweight(self, mode: SpectrumMode, tau: Optional[float] = None) -> Spectrum:
        """Same deltas, different weighting rule."""
        return reweight(self, mode, tau)


def _weights(
    deltas: np.ndarray, support: np.ndarray, mode: SpectrumMode, tau: Optional[float]
) -> np.ndarray:
    if mode == SpectrumMode.PINV:
        out = np.zeros_like(deltas)
        np.divide(1.0, deltas, out=out, where=support)
        return out
    if mode == SpectrumMode.WIENER:
        return deltas / (deltas**2 + tau)
    if mode == SpectrumMode.MASK:
        return support.astype(np.float64)
    raise SpectrumError(f"unknown spectrum mode: {mode}")


def reweight(spec: Spectrum, mode: SpectrumMode, tau: Optional[float] = None) -> Spectrum:
    """Replace the weighting rule without recomputing deltas."""
    mode = SpectrumMode(mode)
    if mode == SpectrumMode.WIENER and (tau is None or tau <= 0):
        raise SpectrumError(f"wiener mode needs tau > 0, got {tau}")
    return replace(spec, mode=mode, tau=tau if mode == SpectrumMode.WIENER else None)


def resolve_strategy(op: ForwardOperator, basis: OrthoBasis, strategy: Strategy) -> Strategy:
    """Pick or validate the delta strategy for an (operator, basis) pair."""
    strategy = Strategy(strategy)
    if strategy == Strategy.AUTO:
        if isinstance(basis, SVDBasis) and basis.operator_fingerprint == op.fingerprint():
            return Strategy.SVD
        if isinstance(basis, DFTBasis) and isinstance(op, ConvolutionOperator):
            return Strategy.FREQUENCY
        if isinstance(basis, WaveletBasis) and op.shift_invariant:
            return Strategy.PER_SUBBAND
        return Strategy.EXACT
    if strategy == Strategy.FREQUENCY and not (
        isinstance(basis, DFTBasis) and isinstance(op, ConvolutionOperator)
    ):
        raise SpectrumError("frequency strategy needs a convolution operator and the dft basis")
    if strategy == Strategy.PER_SUBBAND and not (
        isinstance(basis, WaveletBasis) and op.shift_invariant
    ):
        raise SpectrumError(
            "per-subband strategy needs a shift-invariant operator and a wavelet basis"
        )
    if strategy == Strategy.SVD and not (
        isinstance(basis, SVDBasis) and basis.operator_fingerprint == op.fingerprint()
    ):
        raise SpectrumError("svd strategy needs the svd basis of this operator")
    return strategy


def _atom_delta(op: ForwardOperator, basis: OrthoBasis, index: int) -> float:
    atom = basis.atom(index)
    norm = float(np.linalg.norm(atom))
    return float(np.linalg.norm(op.apply(atom))) / norm


def _exact_deltas(
    op: ForwardOperator,
    basis: OrthoBasis,
    workers: int,
    progress_callback: Optional[Callable[[str, int, int], None]],
) -> np.ndarray:
    if isinstance(basis, CanonicalBasis) and isinstance(op, GainOperator):
        # A e_j = g_j e_j
        return np.abs(op.gains).copy()

    deltas = np.empty(basis.n_atoms)
    chunks = [
        range(start, min(start + EXACT_CHUNK, basis.n_atoms))
        for start in range(0, basis.n_atoms, EXACT_CHUNK)
    ]

    def work(indices: range) -> tuple[range, list[float]]:
        return indices, [_atom_delta(op, basis, j) for j in indices]

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(work, chunk) for chunk in chunks]
        for i, future in enumerate(as_completed(futures)):
            indices, values = future.result()
            deltas[indices.start : indices.stop] = values
            if progress_callback:
                progress_callback("atoms", i + 1, len(chunks))
    return deltas.reshape(basis.coefficient_shape)


def _per_subband_deltas(op: ForwardOperator, basis: WaveletBasis) -> np.ndarray:
    deltas = np.empty(basis.coefficient_shape)
    cols = basis.shape[1]
    for band in basis.subbands:
        # Atoms of one subband are cyclic shifts of each other
        first = band.rows.start * cols + band.cols.start
        deltas[band.index] = _atom_delta(op, basis, first)
    return deltas


def compute_deltas(
    op: ForwardOperator,
    basis: OrthoBasis,
    strategy: Strategy = Strategy.AUTO,
    zero_tol: float = DEFAULT_ZERO_TOL,
    force: bool = False,
    workers: int = 4,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
) -> Spectrum:
    """
    Compute delta_j = ||A psi_j|| for every atom of `basis`.

    Args:
        op: Forward operator
        basis: Basis whose atoms are attenuated
        strategy: exact, per-subband, frequency, svd or auto
        zero_tol: Relative threshold below which deltas count as zero
        force: Allow the exact strategy above 256x256 pixels
        workers: Threads for the exact strategy
        progress_callback: Optional callback(name, current, total)

    Returns:
        Spectrum in pseudo-inverse mode
    """
    if basis.shape != op.input_shape:
        raise ShapeError(f"basis shape {basis.shape} != operator input {op.input_shape}")
    strategy = resolve_strategy(op, basis, strategy)
    logger.info("computing deltas for %s in %s (%s)", op.label, basis.describe(), strategy.value)

    if strategy == Strategy.SVD:
        deltas = np.array(basis.singular_values)
    elif strategy == Strategy.FREQUENCY:
        deltas = np.abs(op.half_transfer_function())
    elif strategy == Strategy.PER_SUBBAND:
        deltas = _per_subband_deltas(op, basis)
    else:
        pixels = basis.shape[0] * basis.shape[1]
        cheap = isinstance(basis, CanonicalBasis) and isinstance(op, GainOperator)
        if pixels > EXACT_STRATEGY_MAX_PIXELS and not (force or cheap):
            raise SpectrumError(
                f"exact strategy refused for {basis.shape} images "
                f"(> {EXACT_STRATEGY_MAX_PIXELS} pixels); pass force to override "
                "(only a gain operator in the canonical basis is exempt)"
            )
        deltas = _exact_deltas(op, basis, workers, progress_callback)

    return Spectrum(
        deltas=deltas, basis_id=basis.fingerprint(), strategy=strategy, zero_tol=zero_tol
    )


def _check_layout(spec: Spectrum, basis: OrthoBasis) -> None:
    if spec.deltas.shape != basis.coefficient_shape or spec.basis_id != basis.fingerprint():
        raise SpectrumError(
            f"spectrum does not belong to basis {basis.describe()} "
            f"(layout {spec.deltas.shape} vs {basis.coefficient_shape})"
        )


def apply_filter(spec: Spectrum, basis: OrthoBasis, r: np.ndarray) -> np.ndarray:
    """Return Psi W Psi^T r with W the spectrum weights."""
    _check_layout(spec, basis)
    if spec.is_identity:
        return np.array(r, dtype=np.float64, copy=True)
    return basis.synthesize(spec.weights * basis.analyze(r))


def apply_half_filter(spec: Spectrum, basis: OrthoBasis, r: np.ndarray) -> np.ndarray:
    """Return Psi W^(1/2) Psi^T r, the symmetric square root of the filter."""
    _check_layout(spec, basis)
    if spec.is_identity:
        return np.array(r, dtype=np.float64, copy=True)
    return basis.synthesize(np.sqrt(spec.weights) * basis.analyze(r))


def diagonalizes(op: ForwardOperator, basis: OrthoBasis) -> bool:
    """True when A^T A maps every atom of `basis` onto a multiple of itself.

    Only then is w_j * delta_j^2 the curvature of the filtered data term along
    atom j. Blur in a wavelet basis or gains in a non-pixel basis couple atoms.
    """
    if isinstance(basis, SVDBasis):
        return basis.operator_fingerprint == op.fingerprint()
    if isinstance(basis, DFTBasis):
        return isinstance(op, ConvolutionOperator)
    return isinstance(basis, CanonicalBasis) and isinstance(op, GainOperator)


def filtered_gradient(
    x: np.ndarray,
    y: np.ndarray,
    op: ForwardOperator,
    basis: OrthoBasis,
    spec: Spectrum,
) -> np.ndarray:
    """Filtered data-fit gradient Psi W Psi^T A^T (A x - y)."""
    return apply_filter(spec, basis, op.adjoint(op.apply(x) - y))


def exact_gradient_svd(
    x: np.ndarray,
    y: np.ndarray,
    basis: OrthoBasis,
    zero_tol: float = DEFAULT_ZERO_TOL,
) -> np.ndarray:
    """Gradient Psi (Delta Psi^T x - D Phi^T y) from stored SVD factors.

    D masks singular values at or below `zero_tol * max(delta)`; with all of them
    above the threshold this is Psi Delta Psi^T x - Psi Phi^T y.
    """
    if not isinstance(basis, SVDBasis):
        raise SpectrumError(f"exact gradient needs the svd basis, got {basis.kind}")
    deltas = basis.singular_values
    theta = basis.analyze(x)
    z_full = basis.phi.T @ np.asarray(y, dtype=np.float64).ravel()
    z = np.zeros_like(theta)
    k = min(z.size, z_full.size)
    z[:k] = z_full[:k]
    support = deltas > zero_tol * (deltas.max() if deltas.size else 0.0)
    return basis.synthesize(deltas * theta - np.where(support, z, 0.0))
