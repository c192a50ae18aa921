"""Forward operators A with exact adjoints: periodic blur, pixel gains, dense matrices."""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from scipy import ndimage

from unsmear.errors import ShapeError
from unsmear.numerics import as_image, uniform_draws

DEFAULT_BLUR_SIGMA = 2.0
DEFAULT_BLUR_RADIUS = 7
SEVERE_BLUR_SIGMA = 4.0
SEVERE_BLUR_RADIUS = 15
DEFAULT_GAIN_LOW = 0.5
DEFAULT_GAIN_HIGH = 1.5
DEFAULT_GAIN_SEED = 1729
# Kernels whose smaller side exceeds this go through the FFT path
FFT_KERNEL_SIDE = 9


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


class ForwardOperator(ABC):
    """A linear map between image grids with an exact adjoint."""

    kind: str = ""

    def __init__(self, input_shape: tuple[int, int], output_shape: tuple[int, int], label: str):
        self.input_shape = (int(input_shape[0]), int(input_shape[1]))
        self.output_shape = (int(output_shape[0]), int(output_shape[1]))
        self.label = label

    @property
    def shift_invariant(self) -> bool:
        """Whether A commutes with cyclic shifts of the image grid."""
        return False

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Return A x."""
        x = as_image(x, "operator input")
        if x.shape != self.input_shape:
            raise ShapeError(f"{self.label}: input shape {x.shape} != {self.input_shape}")
        return self._apply(x)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Return A^T y."""
        y = as_image(y, "adjoint input")
        if y.shape != self.output_shape:
            raise ShapeError(f"{self.label}: adjoint shape {y.shape} != {self.output_shape}")
        return self._adjoint(y)

    @abstractmethod
    def _apply(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _adjoint(self, y: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _payload(self) -> np.ndarray:
        """Array that, with kind and shapes, fully determines the operator."""

    def fingerprint(self) -> str:
        """Stable hex digest used as a spectrum cache key."""
        h = hashlib.sha256()
        h.update(f"{self.kind}|{self.input_shape}|{self.output_shape}|".encode())
        h.update(np.ascontiguousarray(self._payload(), dtype="<f8").tobytes())
        return h.hexdigest()

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.label} {self.input_shape}->{self.output_shape}>"


class ConvolutionOperator(ForwardOperator):
    """Circular (periodic) convolution with a centered, odd-sized kernel."""

    kind = "circular-convolution"

    def __init__(
        self,
        kernel: np.ndarray,
        shape: tuple[int, int],
        method: str = "auto",
        label: Optional[str] = None,
    ):
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            raise ShapeError(f"kernel must be 2-D with odd sides, got {kernel.shape}")
        if kernel.shape[0] > shape[0] or kernel.shape[1] > shape[1]:
            raise ShapeError(f"kernel {kernel.shape} larger than image {tuple(shape)}")
        if method not in ("auto", "fft", "direct"):
            raise ValueError(f"unknown convolution method: {method}")
        super().__init__(shape, shape, label or f"kernel{kernel.shape[0]}x{kernel.shape[1]}")
        self.kernel = _readonly(kernel)
        if method == "auto":
            method = "fft" if min(kernel.shape) > FFT_KERNEL_SIDE else "direct"
        self.method = method
        self._half_transfer = np.fft.rfft2(self.embedded_kernel())

    @property
    def shift_invariant(self) -> bool:
        return True

    def embedded_kernel(self) -> np.ndarray:
        """Kernel zero-padded to the image grid with its center moved to (0, 0)."""
        rows, cols = self.input_shape
        kr, kc = self.kernel.shape
        padded = np.zeros((rows, cols))
        padded[:kr, :kc] = self.kernel
        return np.roll(padded, (-(kr // 2), -(kc // 2)), axis=(0, 1))

    def transfer_function(self) -> np.ndarray:
        """Full DFT of the embedded kernel: the eigenvalues of the circulant A."""
        return np.fft.fft2(self.embedded_kernel())

    def half_transfer_function(self) -> np.ndarray:
        """Non-redundant half (rfft2 layout) of `transfer_function`."""
        return self._half_transfer

    def _apply(self, x: np.ndarray) -> np.ndarray:
        if self.method == "fft":
            return np.fft.irfft2(np.fft.rfft2(x) * self._half_transfer, s=self.input_shape)
        return ndimage.convolve(x, self.kernel, mode="wrap")

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        if self.method == "fft":
            return np.fft.irfft2(
                np.fft.rfft2(y) * np.conj(self._half_transfer), s=self.input_shape
            )
        return ndimage.correlate(y, self.kernel, mode="wrap")

    def _payload(self) -> np.ndarray:
        return self.kernel


class GainOperator(ForwardOperator):
    """Pointwise multiplication by a known gain map (a diagonal A)."""

    kind = "diagonal-gain"

    def __init__(self, gains: np.ndarray, label: Optional[str] = None):
        gains = as_image(gains, "gains")
        if np.any(gains < 0):
            raise ValueError("gains must be nonnegative")
        super().__init__(gains.shape, gains.shape, label or "gain")
        self.gains = _readonly(gains)

    @property
    def shift_invariant(self) -> bool:
        return bool(np.all(self.gains == self.gains.flat[0]))

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return self.gains * x

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.gains * y

    def _payload(self) -> np.ndarray:
        return self.gains


class MatrixOperator(ForwardOperator):
    """Dense matrix acting on row-major flattened images."""

    kind = "explicit-matrix"

    def __init__(
        self,
        matrix: np.ndarray,
        input_shape: tuple[int, int],
        output_shape: tuple[int, int],
        label: Optional[str] = None,
    ):
        matrix = np.asarray(matrix, dtype=np.float64)
        n_in = int(input_shape[0]) * int(input_shape[1])
        n_out = int(output_shape[0]) * int(output_shape[1])
        if matrix.shape != (n_out, n_in):
            raise ShapeError(
                f"matrix shape {matrix.shape} does not map {tuple(input_shape)} "
                f"to {tuple(output_shape)} (expected {(n_out, n_in)})"
            )
        super().__init__(input_shape, output_shape, label or f"matrix{n_out}x{n_in}")
        self.matrix = _readonly(matrix)

    def _apply(self, x: np.ndarray) -> np.ndarray:
        return (self.matrix @ x.ravel()).reshape(self.output_shape)

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        return (self.matrix.T @ y.ravel()).reshape(self.input_shape)

    def _payload(self) -> np.ndarray:
        return self.matrix


def gaussian_kernel(blur_sigma: float, radius: int) -> np.ndarray:
    """Isotropic Gaussian of side 2*radius+1 sampled at integer offsets, summing to 1."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return np.ones((1, 1))
    if blur_sigma <= 0:
        raise ValueError(f"blur_sigma must be > 0, got {blur_sigma}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    rr, cc = np.meshgrid(offsets, offsets, indexing="ij")
    kernel = np.exp(-(rr**2 + cc**2) / (2.0 * blur_sigma**2))
    return kernel / kernel.sum()


def make_gaussian_blur(
    shape: tuple[int, int],
    blur_sigma: float = DEFAULT_BLUR_SIGMA,
    radius: int = DEFAULT_BLUR_RADIUS,
    method: str = "auto",
) -> ConvolutionOperator:
    """Periodic Gaussian blur operator on images of `shape`."""
    if radius < 0 or 2 * radius + 1 > min(shape):
        raise ValueError(f"invalid radius {radius} for image shape {tuple(shape)}")
    kernel = gaussian_kernel(blur_sigma, radius)
    return ConvolutionOperator(
        kernel, shape, method=method, label=f"blur(sigma={blur_sigma:g},radius={radius})"
    )


def make_convolution(shape: tuple[int, int], kernel: np.ndarray, method: str = "auto"):
    """Periodic convolution with an arbitrary odd-sized kernel (e.g. loaded from file)."""
    return ConvolutionOperator(kernel, shape, method=method)


def random_stripe_gains(
    count: int,
    low: float = DEFAULT_GAIN_LOW,
    high: float = DEFAULT_GAIN_HIGH,
    seed: int = DEFAULT_GAIN_SEED,
) -> np.ndarray:
    """Per-line gains drawn uniformly from [low, high) with a fixed seed."""
    if low < 0 or high < low:
        raise ValueError(f"invalid gain range [{low}, {high})")
    return low + (high - low) * uniform_draws((count,), seed)


def make_stripe_gain(
    shape: tuple[int, int],
    gains: np.ndarray,
    axis: str = "columns",
) -> GainOperator:
    """Gain operator scaling each column (or row) by its own factor."""
    gains = np.asarray(gains, dtype=np.float64).ravel()
    rows, cols = shape
    if axis == "columns":
        if gains.size != cols:
            raise ShapeError(f"expected {cols} column gains, got {gains.size}")
        grid = np.broadcast_to(gains[None, :], (rows, cols))
    elif axis == "rows":
        if gains.size != rows:
            raise ShapeError(f"expected {rows} row gains, got {gains.size}")
        grid = np.broadcast_to(gains[:, None], (rows, cols))
    else:
        raise ValueError(f"axis must be 'columns' or 'rows', got {axis!r}")
    if np.any(gains < 0):
        raise ValueError("gains must be nonnegative")
    return GainOperator(grid, label=f"stripe-gain({axis})")


def make_identity(shape: tuple[int, int]) -> GainOperator:
    """Identity operator (unit gains)."""
    return GainOperator(np.ones(shape), label="identity")


def make_explicit(
    matrix: np.ndarray,
    input_shape: tuple[int, int],
    output_shape: Optional[tuple[int, int]] = None,
) -> MatrixOperator:
    """Dense operator; `output_shape` defaults to `input_shape` for square matrices."""
    return MatrixOperator(matrix, input_shape, output_shape or input_shape)
