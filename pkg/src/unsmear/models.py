"""Data models for unsmear."""

from enum import Enum
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_MAX_ITERS = 100
DEFAULT_REL_TOL = 1e-5
DEFAULT_RUNS = 10
DEFAULT_EXTERNAL_TIMEOUT = 120.0


class Method(str, Enum):
    """Restoration algorithm."""

    IDA = "ida"  # gradient step + denoise
    FIDA = "fida"  # filtered gradient step + denoise
    WVD = "wvd"  # one-shot thresholding of unbiased coefficient estimates


class SpectrumMode(str, Enum):
    """How the atom attenuations are turned into filter weights."""

    PINV = "pinv"  # 1/delta on the support, 0 elsewhere
    WIENER = "wiener"  # delta / (delta^2 + tau)
    MASK = "mask"  # 1 on the support, 0 elsewhere


class Strategy(str, Enum):
    """How delta_j = ||A psi_j|| is computed."""

    AUTO = "auto"
    EXACT = "exact"
    PER_SUBBAND = "per-subband"
    FREQUENCY = "frequency"
    SVD = "svd"


class InitKind(str, Enum):
    """Starting point of the iteration."""

    AUTO = "auto"  # adjoint-observation for blur/matrix, observation for gain
    ZEROS = "zeros"
    OBSERVATION = "observation"
    ADJOINT = "adjoint-observation"
    CUSTOM = "custom"


class OperatorKind(str, Enum):
    BLUR = "blur"
    GAIN = "gain"
    IDENTITY = "identity"
    KERNEL = "kernel"
    MATRIX = "matrix"


class BasisKind(str, Enum):
    AUTO = "auto"  # the diagonalizing basis of the operator
    WAVELET = "wavelet"
    DFT = "dft"
    CANONICAL = "canonical"
    SVD = "svd"
    FILE = "file"


class DenoiserKind(str, Enum):
    WAVELET_SOFT = "wavelet-soft"
    WAVELET_HARD = "wavelet-hard"
    EXTERNAL = "external"


class SelectBy(str, Enum):
    """Which iterate's PSNR decides the best lambda in a sweep."""

    FINAL = "final"
    PEAK = "peak"


class OperatorSpec(BaseModel):
    """Forward operator descriptor, e.g. `blur:sigma=2.0,radius=7`."""

    kind: OperatorKind = Field(..., description="Operator family")
    sigma: float = Field(2.0, gt=0, description="Gaussian blur width (blur)")
    radius: int = Field(7, ge=0, description="Blur kernel radius (blur)")
    low: float = Field(0.5, ge=0, description="Lowest stripe gain (gain)")
    high: float = Field(1.5, ge=0, description="Highest stripe gain (gain)")
    seed: int = Field(1729, ge=0, description="Seed of the random stripe gains (gain)")
    axis: str = Field("columns", description="Stripe direction: columns or rows (gain)")
    file: Optional[str] = Field(
        None, description="Gains text file (gain), kernel FIDB (kernel), matrix FIDM (matrix)"
    )
    method: str = Field("auto", description="Convolution path: auto, fft or direct")

    @field_validator("axis")
    @classmethod
    def _check_axis(cls, value: str) -> str:
        if value not in ("columns", "rows"):
            raise ValueError("axis must be 'columns' or 'rows'")
        return value

    @model_validator(mode="after")
    def _check_kind_params(self) -> "OperatorSpec":
        if self.kind in (OperatorKind.KERNEL, OperatorKind.MATRIX) and not self.file:
            raise ValueError(f"{self.kind.value} operator needs file=PATH")
        if self.kind == OperatorKind.GAIN and self.high < self.low:
            raise ValueError("gain range needs low <= high")
        return self

    def descriptor(self) -> str:
        """Canonical descriptor string recorded in result tables."""
        if self.kind == OperatorKind.BLUR:
            return f"blur:sigma={self.sigma:g},radius={self.radius}"
        if self.kind == OperatorKind.GAIN:
            if self.file:
                return f"gain:file={self.file},axis={self.axis}"
            return (
                f"gain:low={self.low:g},high={self.high:g},seed={self.seed},axis={self.axis}"
            )
        if self.kind == OperatorKind.IDENTITY:
            return "identity"
        return f"{self.kind.value}:file={self.file}"


class BasisSpec(BaseModel):
    """Basis descriptor, e.g. `wavelet:taps=6,levels=4`."""

    kind: BasisKind = Field(BasisKind.AUTO, description="Basis family")
    taps: int = Field(6, description="Wavelet filter length (2, 4, 6, 8 or 12)")
    levels: int = Field(4, ge=1, description="Wavelet decomposition depth")
    file: Optional[str] = Field(None, description="FIDM matrix file (file kind)")

    def descriptor(self) -> str:
        if self.kind == BasisKind.WAVELET:
            return f"wavelet:taps={self.taps},levels={self.levels}"
        if self.kind == BasisKind.FILE:
            return f"file:file={self.file}"
        return self.kind.value


class ModeSpec(BaseModel):
    """Spectrum weighting, e.g. `pinv`, `mask` or `wiener:tau=0.01`."""

    kind: SpectrumMode = Field(SpectrumMode.PINV, description="Weighting rule")
    tau: Optional[float] = Field(None, description="Wiener regularization (wiener)")

    @model_validator(mode="after")
    def _check_tau(self) -> "ModeSpec":
        if self.kind == SpectrumMode.WIENER and (self.tau is None or self.tau <= 0):
            raise ValueError("wiener mode needs tau > 0")
        return self

    def descriptor(self) -> str:
        if self.kind == SpectrumMode.WIENER:
            return f"wiener:tau={self.tau:g}"
        return self.kind.value


class DenoiserSpec(BaseModel):
    """Denoiser descriptor, e.g. `wavelet-soft:taps=6` or `external:cmd=/path/to/bm3d`."""

    kind: DenoiserKind = Field(DenoiserKind.WAVELET_SOFT, description="Denoiser family")
    basis: BasisKind = Field(BasisKind.WAVELET, description="Transform (internal kinds)")
    taps: int = Field(6, description="Wavelet filter length")
    levels: int = Field(4, ge=1, description="Wavelet decomposition depth")
    include_coarse: bool = Field(
        False, description="Also threshold the coarsest approximation band"
    )
    cmd: Optional[str] = Field(None, description="Executable command line (external)")
    timeout: float = Field(DEFAULT_EXTERNAL_TIMEOUT, gt=0, description="Seconds per call")

    @model_validator(mode="after")
    def _check_kind_params(self) -> "DenoiserSpec":
        if self.kind == DenoiserKind.EXTERNAL and not self.cmd:
            raise ValueError("external denoiser needs cmd=EXECUTABLE")
        if self.kind != DenoiserKind.EXTERNAL and self.basis not in (
            BasisKind.WAVELET,
            BasisKind.CANONICAL,
            BasisKind.DFT,
        ):
            raise ValueError("internal denoisers support wavelet, canonical or dft bases")
        return self

    def descriptor(self) -> str:
        if self.kind == DenoiserKind.EXTERNAL:
            return f"external:cmd={self.cmd}"
        if self.basis == BasisKind.WAVELET:
            return f"{self.kind.value}:taps={self.taps},levels={self.levels}"
        return f"{self.kind.value}:basis={self.basis.value}"


class MethodSpec(BaseModel):
    """One method column of an experiment: algorithm + basis + weighting."""

    label: str = Field(..., description="Name used in tables, e.g. W-FIDA")
    method: Method = Field(..., description="Algorithm")
    basis: BasisSpec = Field(default_factory=BasisSpec, description="Filtering basis")
    mode: ModeSpec = Field(default_factory=ModeSpec, description="Spectrum weighting")
    strategy: Strategy = Field(Strategy.AUTO, description="Delta computation strategy")

    @field_validator("basis", "mode", mode="before")
    @classmethod
    def _parse_descriptor(cls, value: Any, info) -> Any:
        if isinstance(value, str):
            from unsmear.descriptors import parse_basis, parse_mode

            return parse_basis(value) if info.field_name == "basis" else parse_mode(value)
        return value


class SolverConfig(BaseModel):
    """Run parameters of one IDA/FIDA solve."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    method: Method = Field(Method.FIDA, description="Algorithm")
    gamma: Optional[float] = Field(None, gt=0, description="Step size; None = automatic")
    lambda_gamma: float = Field(0.0, ge=0, description="Denoising parameter")
    max_iters: int = Field(DEFAULT_MAX_ITERS, ge=1, description="Iteration budget")
    rel_tol: float = Field(
        DEFAULT_REL_TOL, ge=0, description="Stop when ||dx|| <= rel_tol*||x||; 0 disables"
    )
    track_best: bool = Field(True, description="Keep the peak-PSNR iterate")
    init: InitKind = Field(InitKind.AUTO, description="Starting point")
    init_image: Optional[np.ndarray] = Field(None, description="Starting image (custom)")
    power_iters: int = Field(200, ge=1, description="Power iterations for automatic gamma")
    seed: int = Field(0, ge=0, description="Seed of the power-iteration start vector")

    @model_validator(mode="after")
    def _check_init(self) -> "SolverConfig":
        if self.init == InitKind.CUSTOM and self.init_image is None:
            raise ValueError("custom init needs init_image")
        return self


class SolveTrace(BaseModel):
    """Per-iteration record of a solve."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    final: np.ndarray = Field(..., description="Last iterate")
    best: Optional[np.ndarray] = Field(None, description="Iterate with the highest PSNR")
    iterates_psnr: list[float] = Field(default_factory=list, description="PSNR per iteration")
    objective_residual: list[float] = Field(
        default_factory=list, description="||A x - y|| per iteration"
    )
    iterations_run: int = Field(..., ge=0, description="Iterations performed")
    gamma: float = Field(..., description="Step size actually used")
    converged: bool = Field(False, description="Stopped on the relative-change tolerance")
    best_iteration: Optional[int] = Field(None, description="1-based index of the best iterate")

    @property
    def final_psnr(self) -> Optional[float]:
        return self.iterates_psnr[-1] if self.iterates_psnr else None

    @property
    def peak_psnr(self) -> Optional[float]:
        return max(self.iterates_psnr) if self.iterates_psnr else None


class ExperimentSpec(BaseModel):
    """A lambda sweep over images, noise levels, methods and seeds."""

    name: str = Field("sweep", description="Experiment name")
    images: list[str] = Field(
        default_factory=lambda: ["phantom:shapes"],
        description="Image paths (PGM/FIDB) or phantom:NAME",
    )
    image_size: int = Field(256, ge=8, description="Side of generated phantoms")
    operator: OperatorSpec = Field(..., description="Forward operator")
    noise_sigmas: list[float] = Field(..., description="Noise standard deviations")
    methods: list[MethodSpec] = Field(..., description="Methods to compare")
    denoiser: DenoiserSpec = Field(default_factory=DenoiserSpec, description="Denoiser")
    lambda_grid: Optional[list[float]] = Field(
        None, description="Denoising parameters; None = geometric grid per sigma"
    )
    lambda_points: int = Field(15, ge=1, description="Points of the default grid")
    runs: int = Field(DEFAULT_RUNS, ge=1, description="Noise realizations per cell")
    base_seed: int = Field(0, ge=0, description="Base seed of all noise draws")
    max_iters: int = Field(DEFAULT_MAX_ITERS, ge=1, description="Iteration budget")
    rel_tol: float = Field(DEFAULT_REL_TOL, ge=0, description="Relative-change tolerance")
    select: SelectBy = Field(SelectBy.FINAL, description="Criterion for the best lambda")
    output_dir: str = Field("results", description="Directory for CSVs and images")
    workers: int = Field(4, ge=1, description="Worker threads")
    save_images: bool = Field(True, description="Write restored images at the best lambda")

    @field_validator("operator", "denoiser", mode="before")
    @classmethod
    def _parse_descriptor(cls, value: Any, info) -> Any:
        if isinstance(value, str):
            from unsmear.descriptors import parse_denoiser, parse_operator

            if info.field_name == "operator":
                return parse_operator(value)
            return parse_denoiser(value)
        return value

    @field_validator("images", "noise_sigmas", "methods")
    @classmethod
    def _non_empty(cls, value: list) -> list:
        if not value:
            raise ValueError("must not be empty")
        return value

    @field_validator("noise_sigmas")
    @classmethod
    def _nonnegative_sigmas(cls, value: list[float]) -> list[float]:
        if any(s < 0 for s in value):
            raise ValueError("noise sigmas must be >= 0")
        return value

    @field_validator("lambda_grid")
    @classmethod
    def _check_grid(cls, value: Optional[list[float]]) -> Optional[list[float]]:
        if value is not None:
            if not value:
                raise ValueError("lambda_grid must not be empty")
            if any(lam < 0 for lam in value):
                raise ValueError("lambda values must be >= 0")
        return value


class CellResult(BaseModel):
    """Outcome of one (image, sigma, method, lambda, run) solve."""

    image: str
    sigma: float
    method: str
    lam: float
    run: int
    seed: int
    psnr_final: Optional[float] = None
    psnr_peak: Optional[float] = None
    iterations: int = 0
    psnr_curve: list[float] = Field(default_factory=list)
    error: Optional[str] = None

    @property
    def key(self) -> tuple:
        return (self.image, self.sigma, self.method, self.lam, self.run)

    @property
    def ok(self) -> bool:
        return self.error is None


class ResultRow(BaseModel):
    """Best-over-lambda summary for one (image, method, sigma)."""

    image: str
    method: str
    sigma: float
    best_lambda: Optional[float] = None
    psnr_mean: Optional[float] = None
    psnr_std: Optional[float] = None
    psnr_final_mean: Optional[float] = None
    psnr_peak_mean: Optional[float] = None
    iterations: Optional[float] = None
    runs: int = 0
    failures: int = 0
    operator: str = ""


class ResultTable(BaseModel):
    """All summary rows of a sweep, in deterministic order."""

    rows: list[ResultRow] = Field(default_factory=list)
    operator: str = ""
    select: SelectBy = SelectBy.FINAL

    def get(self, image: str, method: str, sigma: float) -> Optional[ResultRow]:
        for row in self.rows:
            if row.image == image and row.method == method and row.sigma == sigma:
                return row
        return None


class FetchResult(BaseModel):
    """Result of downloading one test image."""

    name: str = Field(..., description="Image name, e.g. cameraman")
    path: str = Field(..., description="Destination file")
    bytes_written: int = Field(0, description="Size of the downloaded file")
    success: bool = Field(True, description="Whether the download succeeded")
    error: Optional[str] = Field(None, description="Error message if failed")
    skipped: bool = Field(False, description="File already present")
