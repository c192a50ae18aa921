"""Image and matrix files: FIDB/FIDM (lossless doubles), 8-bit PGM, gain lists.

FIDB layout: b"FIDB", little-endian u32 version (1), u32 rows, u32 cols, then
rows*cols little-endian float64 values in row-major order. FIDM is the same with
magic b"FIDM" and the values stored column-major.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from unsmear.errors import ImageFormatError
from unsmear.numerics import as_image

FIDB_MAGIC = b"FIDB"
FIDM_MAGIC = b"FIDM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")

PGM_SUFFIXES = (".pgm", ".pnm")
FIDB_SUFFIXES = (".fidb",)


def expand_path(path) -> Path:
    """Expand ~ and environment variables in path."""
    return Path(os.path.expanduser(os.path.expandvars(str(path))))


def _write_doubles(path: Path, magic: bytes, data: np.ndarray, order: str) -> None:
    rows, cols = data.shape
    payload = np.asarray(data, dtype="<f8").tobytes(order=order)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, FORMAT_VERSION, rows, cols))
        fh.write(payload)


def _read_doubles(path: Path, magic: bytes, order: str) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ImageFormatError(f"{path}: file too short for a {magic.decode()} header")
    found, version, rows, cols = _HEADER.unpack_from(raw)
    if found != magic:
        raise ImageFormatError(f"{path}: bad magic {found!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise ImageFormatError(f"{path}: unsupported version {version}")
    expected = rows * cols * 8
    payload = raw[_HEADER.size :]
    if len(payload) != expected:
        raise ImageFormatError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected})"
        )
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return values.reshape((rows, cols), order=order)


def write_fidb(data: np.ndarray, path: Path) -> None:
    """Write a real 2-D array losslessly."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ImageFormatError(f"FIDB stores 2-D arrays, got shape {data.shape}")
    _write_doubles(Path(path), FIDB_MAGIC, data, "C")


def read_fidb(path: Path) -> np.ndarray:
    return _read_doubles(Path(path), FIDB_MAGIC, "C")


def write_matrix(matrix: np.ndarray, path: Path) -> None:
    """Write a dense matrix (e.g. a basis, columns = atoms) in FIDM format."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ImageFormatError(f"FIDM stores 2-D arrays, got shape {matrix.shape}")
    _write_doubles(Path(path), FIDM_MAGIC, matrix, "F")


def read_matrix(path: Path) -> np.ndarray:
    return _read_doubles(Path(path), FIDM_MAGIC, "F")


def read_pgm(path: Path) -> np.ndarray:
    """Read an 8-bit P5 (binary) or P2 (plain) PGM into float64 values in [0, 255]."""
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            if im.format != "PPM" or im.mode != "L":
                raise ImageFormatError(
                    f"{path}: unsupported PGM variant (format={im.format}, mode={im.mode}); "
                    "only 8-bit grayscale is supported"
                )
            im.load()
            return np.asarray(im, dtype=np.float64)
    except ImageFormatError:
        raise
    except (UnidentifiedImageError, SyntaxError, ValueError, OSError) as e:
        raise ImageFormatError(f"{path}: malformed or truncated PGM ({e})") from e


def write_pgm(img: np.ndarray, path: Path) -> None:
    """Write an 8-bit binary PGM, clamping to [0, 255] and rounding half-to-even."""
    img = as_image(img)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    PILImage.fromarray(pixels).save(Path(path), format="PPM")


def read_image(path: Path) -> np.ndarray:
    """Read a PGM or FIDB image, chosen by file suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in FIDB_SUFFIXES:
        return as_image(read_fidb(path), str(path))
    if suffix in PGM_SUFFIXES:
        return read_pgm(path)
    raise ImageFormatError(f"{path}: unknown image suffix {suffix!r} (use .pgm or .fidb)")


def write_image(img: np.ndarray, path: Path) -> None:
    """Write a PGM (8-bit, clamped) or FIDB (lossless) image by file suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in FIDB_SUFFIXES:
        write_fidb(as_image(img), path)
    elif suffix in PGM_SUFFIXES:
        write_pgm(img, path)
    else:
        raise ImageFormatError(f"{path}: unknown image suffix {suffix!r} (use .pgm or .fidb)")


def read_gains(path: Path) -> np.ndarray:
    """Read one gain value per line (blank lines and # comments ignored)."""
    try:
        gains = np.loadtxt(Path(path), dtype=np.float64, comments="#", ndmin=1)
    except ValueError as e:
        raise ImageFormatError(f"{path}: malformed gain list ({e})") from e
    if gains.ndim != 1:
        raise ImageFormatError(f"{path}: expected one gain per line")
    return gains
