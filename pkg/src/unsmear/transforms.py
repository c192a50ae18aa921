"""Orthogonal bases Psi: periodized Daubechies wavelets, unitary DFT, pixels, SVD, files.

Every basis maps an image to a coefficient array (`analyze`, Psi^T x) and back
(`synthesize`, Psi c). The coefficient layout belongs to the basis:

- wavelet: image-shaped array, subbands packed in the usual pyramid (coarsest
  approximation in the top-left corner, see `WaveletBasis.subbands`)
- dft: rows x (cols // 2 + 1) complex half-spectrum with unitary scaling
- canonical: the pixels themselves
- svd / file: flat vector in atom order
"""

from __future__ import annotations

import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from math import isqrt
from pathlib import Path
from typing import Optional

import numpy as np
import pywt

from unsmear.errors import ShapeError, SpectrumError
from unsmear.numerics import as_image
from unsmear.operators import ForwardOperator, MatrixOperator

logger = logging.getLogger(__name__)

DEFAULT_WAVELET_TAPS = 6
DEFAULT_LEVELS = 4
SVD_MAX_DIM = 4096
FILE_BASIS_NORM_TOL = 1e-6

# Filter length -> PyWavelets name. "D6" means the 6-tap filter (db3) by default.
WAVELET_FAMILIES = {2: "haar", 4: "db2", 6: "db3", 8: "db4", 12: "db6"}


@dataclass(frozen=True)
class Subband:
    """One (scale, orientation) block of a wavelet coefficient array."""

    scale: int
    orientation: str  # "approx", "da", "ad" or "dd" (PyWavelets naming)
    rows: slice
    cols: slice

    @property
    def index(self) -> tuple[slice, slice]:
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        return (self.rows.stop - self.rows.start) * (self.cols.stop - self.cols.start)


class OrthoBasis(ABC):
    """A (near-)orthogonal basis with forward/inverse analysis."""

    kind: str = ""

    def __init__(self, shape: tuple[int, int]):
        self.shape = (int(shape[0]), int(shape[1]))

    @property
    def coefficient_shape(self) -> tuple[int, ...]:
        return self.shape

    @property
    def coefficient_dtype(self):
        return np.float64

    @property
    def n_atoms(self) -> int:
        return int(np.prod(self.coefficient_shape))

    def analyze(self, x: np.ndarray) -> np.ndarray:
        """Coefficients Psi^T x."""
        x = as_image(x, "basis input")
        if x.shape != self.shape:
            raise ShapeError(f"{self.describe()}: image shape {x.shape} != {self.shape}")
        return self._analyze(x)

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        """Image Psi c; exact inverse of `analyze`."""
        c = np.asarray(c)
        if c.shape != self.coefficient_shape:
            raise ShapeError(
                f"{self.describe()}: coefficient layout {c.shape} != {self.coefficient_shape}"
            )
        return self._synthesize(c)

    def atom(self, index: int) -> np.ndarray:
        """Synthesize the unit coefficient vector at flat position `index`."""
        unit = np.zeros(self.coefficient_shape, dtype=self.coefficient_dtype)
        unit.flat[index] = 1.0
        return self._synthesize(unit)

    def coarse_mask(self) -> Optional[np.ndarray]:
        """Boolean mask of the coarsest approximation band, if the basis has one."""
        return None

    @abstractmethod
    def _analyze(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _synthesize(self, c: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def describe(self) -> str: ...

    def _fingerprint_payload(self) -> bytes:
        return b""

    def fingerprint(self) -> str:
        """Stable hex digest identifying the basis (spectrum cache key part)."""
        cached = getattr(self, "_fingerprint", None)
        if cached is None:
            h = hashlib.sha256()
            h.update(f"{self.describe()}|{self.shape}|".encode())
            h.update(self._fingerprint_payload())
            cached = self._fingerprint = h.hexdigest()
        return cached

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.describe()} {self.shape}>"


class WaveletBasis(OrthoBasis):
    """Separable 2-D periodized orthogonal filter bank iterated on the LL band."""

    kind = "wavelet"

    def __init__(
        self,
        shape: tuple[int, int],
        taps: int = DEFAULT_WAVELET_TAPS,
        levels: int = DEFAULT_LEVELS,
    ):
        super().__init__(shape)
        if taps not in WAVELET_FAMILIES:
            raise ValueError(
                f"unsupported wavelet taps {taps}; choose from {sorted(WAVELET_FAMILIES)}"
            )
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        step = 2**levels
        if self.shape[0] % step or self.shape[1] % step:
            raise ShapeError(f"shape {self.shape} is not divisible by 2^{levels} = {step}")
        self.taps = taps
        self.levels = levels
        self.wavelet = pywt.Wavelet(WAVELET_FAMILIES[taps])
        self.subbands = self._layout()

    def _layout(self) -> list[Subband]:
        bands = []
        rows, cols = self.shape
        for scale in range(1, self.levels + 1):
            r, c = rows >> scale, cols >> scale
            bands.append(Subband(scale, "da", slice(0, r), slice(c, 2 * c)))
            bands.append(Subband(scale, "ad", slice(r, 2 * r), slice(0, c)))
            bands.append(Subband(scale, "dd", slice(r, 2 * r), slice(c, 2 * c)))
        r, c = rows >> self.levels, cols >> self.levels
        bands.append(Subband(self.levels, "approx", slice(0, r), slice(0, c)))
        return bands

    def coarse_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.subbands[-1].index] = True
        return mask

    def _analyze(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.shape)
        approx = x
        for scale in range(1, self.levels + 1):
            approx, (ch, cv, cd) = pywt.dwt2(approx, self.wavelet, mode="periodization")
            r, c = approx.shape
            out[:r, c : 2 * c] = ch
            out[r : 2 * r, :c] = cv
            out[r : 2 * r, c : 2 * c] = cd
        out[: approx.shape[0], : approx.shape[1]] = approx
        return out

    def _synthesize(self, c: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        rows, cols = self.shape
        approx = c[: rows >> self.levels, : cols >> self.levels]
        for scale in range(self.levels, 0, -1):
            r, k = rows >> scale, cols >> scale
            details = (c[:r, k : 2 * k], c[r : 2 * r, :k], c[r : 2 * r, k : 2 * k])
            approx = pywt.idwt2((approx, details), self.wavelet, mode="periodization")
        return approx

    def describe(self) -> str:
        return f"wavelet(taps={self.taps},levels={self.levels})"


class DFTBasis(OrthoBasis):
    """Unitary 2-D DFT stored as the non-redundant half-spectrum of a real image."""

    kind = "dft"

    @property
    def coefficient_shape(self) -> tuple[int, ...]:
        return (self.shape[0], self.shape[1] // 2 + 1)

    @property
    def coefficient_dtype(self):
        return np.complex128

    def multiplicity(self) -> np.ndarray:
        """How many full-spectrum bins each half-spectrum bin stands for (1 or 2)."""
        weights = np.full(self.coefficient_shape, 2.0)
        weights[:, 0] = 1.0
        if self.shape[1] % 2 == 0:
            weights[:, -1] = 1.0
        return weights

    def _analyze(self, x: np.ndarray) -> np.ndarray:
        return np.fft.rfft2(x, norm="ortho")

    def _synthesize(self, c: np.ndarray) -> np.ndarray:
        return np.fft.irfft2(c, s=self.shape, norm="ortho")

    def describe(self) -> str:
        return "dft"


class CanonicalBasis(OrthoBasis):
    """The pixel basis; the diagonalizing basis of any gain operator."""

    kind = "canonical"

    def _analyze(self, x: np.ndarray) -> np.ndarray:
        return x.copy()

    def _synthesize(self, c: np.ndarray) -> np.ndarray:
        return np.array(c, dtype=np.float64, copy=True)

    def describe(self) -> str:
        return "canonical"


class MatrixBasis(OrthoBasis):
    """Basis given by an explicit square matrix whose columns are the atoms."""

    kind = "file"

    def __init__(self, matrix: np.ndarray, shape: tuple[int, int], source: str = ""):
        super().__init__(shape)
        matrix = np.array(matrix, dtype=np.float64, copy=True)
        n = self.shape[0] * self.shape[1]
        if matrix.shape != (n, n):
            raise ShapeError(f"basis matrix {matrix.shape} does not match shape {self.shape}")
        matrix.setflags(write=False)
        self.matrix = matrix
        self.source = source

    @property
    def coefficient_shape(self) -> tuple[int, ...]:
        return (self.shape[0] * self.shape[1],)

    def _analyze(self, x: np.ndarray) -> np.ndarray:
        return self.matrix.T @ x.ravel()

    def _synthesize(self, c: np.ndarray) -> np.ndarray:
        return (self.matrix @ np.asarray(c, dtype=np.float64)).reshape(self.shape)

    def describe(self) -> str:
        return f"file({self.source})" if self.source else "file"

    def _fingerprint_payload(self) -> bytes:
        return np.ascontiguousarray(self.matrix, dtype="<f8").tobytes()


class SVDBasis(MatrixBasis):
    """Right singular vectors of an explicit operator: A = Phi Delta Psi^T exactly."""

    kind = "svd"

    def __init__(self, op: MatrixOperator):
        u, s, vt = np.linalg.svd(op.matrix, full_matrices=True)
        super().__init__(vt.T, op.input_shape, source=op.label)
        n = self.matrix.shape[0]
        values = np.zeros(n)
        values[: s.size] = s
        values.setflags(write=False)
        u.setflags(write=False)
        self.phi = u
        self.singular_values = values
        self.operator_fingerprint = op.fingerprint()

    @property
    def psi(self) -> np.ndarray:
        return self.matrix

    def describe(self) -> str:
        return f"svd({self.source})"

    def _fingerprint_payload(self) -> bytes:
        return self.operator_fingerprint.encode()


def make_wavelet_basis(
    shape: tuple[int, int],
    taps: int = DEFAULT_WAVELET_TAPS,
    levels: int = DEFAULT_LEVELS,
) -> WaveletBasis:
    """Periodized Daubechies basis; `taps` is the filter length (2 = Haar)."""
    return WaveletBasis(shape, taps=taps, levels=levels)


def make_dft_basis(shape: tuple[int, int]) -> DFTBasis:
    return DFTBasis(shape)


def make_canonical_basis(shape: tuple[int, int]) -> CanonicalBasis:
    return CanonicalBasis(shape)


def make_svd_basis(op: ForwardOperator) -> SVDBasis:
    """Exact SVD basis of a dense operator (total dimension at most 4096)."""
    if not isinstance(op, MatrixOperator):
        raise SpectrumError(f"svd basis needs an explicit-matrix operator, got {op.kind}")
    if max(op.matrix.shape) > SVD_MAX_DIM:
        raise SpectrumError(
            f"svd basis limited to dimension {SVD_MAX_DIM}, operator is {op.matrix.shape}"
        )
    return SVDBasis(op)


def load_basis(path: Path, shape: Optional[tuple[int, int]] = None) -> MatrixBasis:
    """Load a basis matrix (FIDM file, columns are atoms).

    Columns that are not unit-norm within 1e-6 are renormalized with a warning.
    The image shape defaults to the square whose pixel count matches the matrix.
    """
    from unsmear.fileio import read_matrix

    matrix = read_matrix(path)
    n_rows, n_cols = matrix.shape
    if n_rows != n_cols:
        raise ShapeError(f"basis matrix must be square, got {matrix.shape}")
    if shape is None:
        side = isqrt(n_rows)
        if side * side != n_rows:
            raise ShapeError(f"cannot infer a square image shape for {n_rows} pixels")
        shape = (side, side)
    norms = np.linalg.norm(matrix, axis=0)
    if np.any(norms == 0):
        raise ShapeError(f"basis matrix {path} has zero columns")
    off = np.abs(norms - 1.0) > FILE_BASIS_NORM_TOL
    if np.any(off):
        logger.warning(
            "basis %s: %d columns not unit-norm, renormalizing", path, int(np.count_nonzero(off))
        )
        matrix = matrix / norms
    return MatrixBasis(matrix, shape, source=Path(path).name)
