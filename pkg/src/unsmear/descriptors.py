"""Parse `kind:key=value,...` descriptors and build operators, bases and methods from them."""

from __future__ import annotations

import logging
from typing import Any

from pydantic import BaseModel, ValidationError

from unsmear.errors import DescriptorError
from unsmear.fileio import expand_path, read_fidb, read_gains, read_matrix
from unsmear.models import (
    BasisKind,
    BasisSpec,
    DenoiserSpec,
    Method,
    MethodSpec,
    ModeSpec,
    OperatorKind,
    OperatorSpec,
)
from unsmear.operators import (
    ConvolutionOperator,
    ForwardOperator,
    GainOperator,
    MatrixOperator,
    make_convolution,
    make_explicit,
    make_gaussian_blur,
    make_identity,
    make_stripe_gain,
    random_stripe_gains,
)
from unsmear.spectrum import WAVELET_WIENER_TAU
from unsmear.transforms import (
    OrthoBasis,
    load_basis,
    make_canonical_basis,
    make_dft_basis,
    make_svd_basis,
    make_wavelet_basis,
)

logger = logging.getLogger(__name__)

# Shorthand method names accepted on the command line:
# name -> (label, method, basis, default weighting)
STANDARD_METHODS = {
    "ida": ("IDA", Method.IDA, "auto", "pinv"),
    "w-fida": ("W-FIDA", Method.FIDA, "wavelet", f"wiener:tau={WAVELET_WIENER_TAU:g}"),
    "d-fida": ("D-FIDA", Method.FIDA, "auto", "pinv"),
    "w-wvd": ("W-WVD", Method.WVD, "wavelet", "pinv"),
    "d-wvd": ("D-WVD", Method.WVD, "auto", "pinv"),
}


def parse_descriptor(text: str) -> tuple[str, dict[str, str]]:
    """Split `kind:key=value,key=value` into the kind and a parameter dict.

    A comma-separated piece without `=` continues the previous value, so
    commands such as `external:cmd=tool --opt a,b` survive intact.
    """
    text = text.strip()
    if not text:
        raise DescriptorError("empty descriptor")
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    params: dict[str, str] = {}
    last = None
    for piece in rest.split(",") if rest.strip() else []:
        key, sep, value = piece.partition("=")
        if sep and key.strip() and " " not in key.strip():
            last = key.strip().lower()
            if last in params:
                raise DescriptorError(f"{text!r}: duplicate key {last!r}")
            params[last] = value.strip()
        elif last is not None:
            params[last] += "," + piece
        else:
            raise DescriptorError(f"{text!r}: expected key=value, got {piece!r}")
    return kind, params


def _validate(model: type[BaseModel], text: str, kind: str, params: dict[str, Any]):
    allowed = set(model.model_fields) - {"kind"}
    unknown = sorted(set(params) - allowed)
    if unknown:
        raise DescriptorError(
            f"{text!r}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}"
        )
    try:
        return model.model_validate({"kind": kind, **params})
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'value'}: {err['msg']}" for err in e.errors()
        )
        raise DescriptorError(f"{text!r}: {problems}") from e


def parse_operator(text: str) -> OperatorSpec:
    """e.g. `blur:sigma=2.0,radius=7`, `gain:low=0.5,high=1.5`, `identity`."""
    kind, params = parse_descriptor(text)
    return _validate(OperatorSpec, text, kind, params)


def parse_basis(text: str) -> BasisSpec:
    """e.g. `wavelet:taps=6,levels=4`, `dft`, `canonical`, `svd`, `auto`, `file:file=B.fidm`."""
    kind, params = parse_descriptor(text)
    return _validate(BasisSpec, text, kind, params)


def parse_mode(text: str) -> ModeSpec:
    """e.g. `pinv`, `mask`, `wiener:tau=0.01`."""
    kind, params = parse_descriptor(text)
    return _validate(ModeSpec, text, kind, params)


def parse_denoiser(text: str) -> DenoiserSpec:
    """e.g. `wavelet-soft`, `wavelet-hard:taps=8`, `external:cmd=/path/to/bm3d`."""
    kind, params = parse_descriptor(text)
    return _validate(DenoiserSpec, text, kind, params)


def parse_method(text: str) -> MethodSpec:
    """Shorthand `NAME[@MODE]`, NAME one of ida, w-fida, d-fida, w-wvd, d-wvd.

    w-fida defaults to Wiener weighting, the others to the pseudo-inverse; a
    MODE other than the default is appended to the label.

    Examples: `w-fida`, `d-fida@wiener:tau=0.05`, `d-fida@mask`.
    """
    name, _, mode = text.strip().partition("@")
    entry = STANDARD_METHODS.get(name.strip().lower())
    if entry is None:
        raise DescriptorError(
            f"{text!r}: unknown method {name!r}; choose from {', '.join(STANDARD_METHODS)}"
        )
    label, method, basis, default_mode = entry
    mode_spec = parse_mode(mode or default_mode)
    if mode_spec.descriptor() != parse_mode(default_mode).descriptor():
        label = f"{label}/{mode_spec.descriptor()}"
    return MethodSpec(label=label, method=method, basis=parse_basis(basis), mode=mode_spec)


def build_operator(spec: OperatorSpec, shape: tuple[int, int]) -> ForwardOperator:
    """Instantiate an operator descriptor for images of `shape`."""
    if spec.kind == OperatorKind.BLUR:
        return make_gaussian_blur(shape, spec.sigma, spec.radius, method=spec.method)
    if spec.kind == OperatorKind.GAIN:
        count = shape[1] if spec.axis == "columns" else shape[0]
        if spec.file:
            gains = read_gains(expand_path(spec.file))
        else:
            gains = random_stripe_gains(count, spec.low, spec.high, spec.seed)
        return make_stripe_gain(shape, gains, axis=spec.axis)
    if spec.kind == OperatorKind.IDENTITY:
        return make_identity(shape)
    if spec.kind == OperatorKind.KERNEL:
        kernel = read_fidb(expand_path(spec.file))
        return make_convolution(shape, kernel, method=spec.method)

    matrix = read_matrix(expand_path(spec.file))
    n = shape[0] * shape[1]
    if matrix.shape[1] != n:
        raise DescriptorError(
            f"matrix {spec.file} has {matrix.shape[1]} columns, images have {n} pixels"
        )
    output_shape = shape if matrix.shape[0] == n else (matrix.shape[0], 1)
    return make_explicit(matrix, shape, output_shape)


def diagonalizing_basis_kind(op: ForwardOperator) -> BasisKind:
    """dft for convolutions, canonical for gains, svd for dense matrices."""
    if isinstance(op, ConvolutionOperator):
        return BasisKind.DFT
    if isinstance(op, GainOperator):
        return BasisKind.CANONICAL
    if isinstance(op, MatrixOperator):
        return BasisKind.SVD
    raise DescriptorError(f"no diagonalizing basis known for {op.kind}")


def build_basis(spec: BasisSpec, op: ForwardOperator, shape: tuple[int, int]) -> OrthoBasis:
    """Instantiate a basis descriptor; `auto` picks the basis that diagonalizes `op`."""
    kind = spec.kind
    if kind == BasisKind.AUTO:
        kind = diagonalizing_basis_kind(op)
        logger.info("basis auto-selected for %s: %s", op.label, kind.value)
    if kind == BasisKind.WAVELET:
        return make_wavelet_basis(shape, taps=spec.taps, levels=spec.levels)
    if kind == BasisKind.DFT:
        return make_dft_basis(shape)
    if kind == BasisKind.CANONICAL:
        return make_canonical_basis(shape)
    if kind == BasisKind.SVD:
        return make_svd_basis(op)
    if not spec.file:
        raise DescriptorError("file basis needs file=PATH")
    return load_basis(expand_path(spec.file), shape)
