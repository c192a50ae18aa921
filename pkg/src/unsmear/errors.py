"""Exception types for unsmear."""


class UnsmearError(Exception):
    """Base class for all errors raised by unsmear."""


class ShapeError(UnsmearError, ValueError):
    """Array or image dimensions do not match what an operation expects."""


class NonFiniteError(UnsmearError, ValueError):
    """An image contains NaN or infinite entries at an API boundary."""


class DescriptorError(UnsmearError, ValueError):
    """A `kind:key=value` descriptor or experiment spec could not be parsed."""


class ImageFormatError(UnsmearError, ValueError):
    """A PGM/FIDB/FIDM file is malformed, truncated or unsupported."""


class SpectrumError(UnsmearError, ValueError):
    """Incompatible operator/basis/strategy combination or spectrum layout."""


class DenoiserError(UnsmearError, RuntimeError):
    """An external denoiser failed (exit code, timeout or bad output)."""


class SolverError(UnsmearError, RuntimeError):
    """A solver iteration failed; `iteration` is the 1-based failing step."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration
