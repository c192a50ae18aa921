"""Built-in experiment presets for the deblurring and gain-correction scenarios."""

from __future__ import annotations

from unsmear.errors import DescriptorError
from unsmear.models import (
    BasisKind,
    BasisSpec,
    ExperimentSpec,
    Method,
    MethodSpec,
    ModeSpec,
    OperatorKind,
    OperatorSpec,
    SpectrumMode,
)
from unsmear.operators import (
    DEFAULT_BLUR_RADIUS,
    DEFAULT_BLUR_SIGMA,
    DEFAULT_GAIN_HIGH,
    DEFAULT_GAIN_LOW,
    DEFAULT_GAIN_SEED,
    SEVERE_BLUR_RADIUS,
    SEVERE_BLUR_SIGMA,
)
from unsmear.spectrum import WAVELET_WIENER_TAU

PRESET_IMAGES = ["phantom:shapes", "phantom:smooth"]

IDA = MethodSpec(label="IDA", method=Method.IDA)
W_FIDA = MethodSpec(
    label="W-FIDA",
    method=Method.FIDA,
    basis=BasisSpec(kind=BasisKind.WAVELET),
    mode=ModeSpec(kind=SpectrumMode.WIENER, tau=WAVELET_WIENER_TAU),
)
D_FIDA = MethodSpec(label="D-FIDA", method=Method.FIDA, basis=BasisSpec(kind=BasisKind.AUTO))


PRESETS: dict[str, ExperimentSpec] = {
    "deblur": ExperimentSpec(
        name="deblur",
        images=PRESET_IMAGES,
        operator=OperatorSpec(
            kind=OperatorKind.BLUR, sigma=DEFAULT_BLUR_SIGMA, radius=DEFAULT_BLUR_RADIUS
        ),
        noise_sigmas=[0.2, 1.0, 5.0],
        methods=[IDA, W_FIDA, D_FIDA],
    ),
    "gain": ExperimentSpec(
        name="gain",
        images=PRESET_IMAGES,
        operator=OperatorSpec(
            kind=OperatorKind.GAIN,
            low=DEFAULT_GAIN_LOW,
            high=DEFAULT_GAIN_HIGH,
            seed=DEFAULT_GAIN_SEED,
        ),
        noise_sigmas=[5.0, 10.0, 20.0],
        methods=[IDA, W_FIDA, D_FIDA],
    ),
    "severe-blur": ExperimentSpec(
        name="severe-blur",
        images=PRESET_IMAGES,
        operator=OperatorSpec(
            kind=OperatorKind.BLUR, sigma=SEVERE_BLUR_SIGMA, radius=SEVERE_BLUR_RADIUS
        ),
        noise_sigmas=[0.2],
        methods=[IDA, D_FIDA],
    ),
}


def get_preset(name: str) -> ExperimentSpec:
    """Independent copy of a built-in preset."""
    preset = PRESETS.get(name)
    if preset is None:
        raise DescriptorError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return preset.model_copy(deep=True)
