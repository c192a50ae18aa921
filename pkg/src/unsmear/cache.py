"""On-disk cache of atom attenuations, keyed by operator and basis fingerprints."""

from __future__ import annotations

import hashlib
import logging
import os
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from unsmear.errors import ImageFormatError, SpectrumError
from unsmear.fileio import expand_path, read_fidb, write_fidb
from unsmear.models import Strategy
from unsmear.operators import ForwardOperator
from unsmear.spectrum import DEFAULT_ZERO_TOL, Spectrum, compute_deltas, resolve_strategy
from unsmear.transforms import OrthoBasis

logger = logging.getLogger(__name__)

CACHE_ENV_VAR = "UNSMEAR_CACHE_DIR"
DEFAULT_CACHE_DIR = "~/.cache/unsmear"


def default_cache_dir() -> Path:
    """Cache directory from $UNSMEAR_CACHE_DIR, else ~/.cache/unsmear."""
    return expand_path(os.environ.get(CACHE_ENV_VAR) or DEFAULT_CACHE_DIR)


def cache_key(op: ForwardOperator, basis: OrthoBasis, strategy: Strategy, zero_tol: float) -> str:
    h = hashlib.sha256()
    h.update(op.fingerprint().encode())
    h.update(basis.fingerprint().encode())
    h.update(f"|{Strategy(strategy).value}|{zero_tol!r}".encode())
    return h.hexdigest()


def _load(
    path: Path, basis: OrthoBasis, strategy: Strategy, zero_tol: float
) -> Optional[Spectrum]:
    try:
        stored = read_fidb(path)
    except (ImageFormatError, OSError) as e:
        logger.warning("ignoring unreadable spectrum cache entry %s: %s", path, e)
        return None
    if stored.size != basis.n_atoms:
        logger.warning("ignoring spectrum cache entry %s with %d values", path, stored.size)
        return None
    try:
        return Spectrum(
            deltas=stored.reshape(basis.coefficient_shape),
            basis_id=basis.fingerprint(),
            strategy=strategy,
            zero_tol=zero_tol,
        )
    except SpectrumError as e:
        logger.warning("ignoring invalid spectrum cache entry %s: %s", path, e)
        return None


def _store(spec: Spectrum, path: Path, op: ForwardOperator, basis: OrthoBasis) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_fidb(deltas_as_array(spec), path)
    sidecar = {
        "operator": op.label,
        "operator_fingerprint": op.fingerprint(),
        "basis": basis.describe(),
        "strategy": spec.strategy.value,
        "zero_tol": spec.zero_tol,
        "coefficient_shape": list(basis.coefficient_shape),
    }
    path.with_suffix(".yaml").write_text(yaml.safe_dump(sidecar, sort_keys=True))


def cached_spectrum(
    op: ForwardOperator,
    basis: OrthoBasis,
    strategy: Strategy = Strategy.AUTO,
    zero_tol: float = DEFAULT_ZERO_TOL,
    cache_dir: Optional[Path] = None,
    force: bool = False,
    workers: int = 4,
    progress_callback: Optional[Callable[[str, int, int], None]] = None,
) -> Spectrum:
    """
    Return the spectrum of (op, basis), computing and storing it on a cache miss.

    Args:
        op: Forward operator
        basis: Basis whose atoms are attenuated
        strategy: Delta strategy (auto resolves before keying)
        zero_tol: Relative zero threshold
        cache_dir: Directory of cache entries (default: default_cache_dir())
        force: Allow the exact strategy on large images
        workers: Threads for the exact strategy
        progress_callback: Optional callback(name, current, total)

    Returns:
        Spectrum in pseudo-inverse mode
    """
    strategy = resolve_strategy(op, basis, strategy)
    directory = expand_path(cache_dir) if cache_dir is not None else default_cache_dir()
    path = directory / f"{cache_key(op, basis, strategy, zero_tol)}.fidb"

    if path.exists():
        spec = _load(path, basis, strategy, zero_tol)
        if spec is not None:
            logger.info("spectrum cache hit: %s", path.name)
            return spec

    logger.info("spectrum cache miss: %s", path.name)
    spec = compute_deltas(
        op,
        basis,
        strategy=strategy,
        zero_tol=zero_tol,
        force=force,
        workers=workers,
        progress_callback=progress_callback,
    )
    try:
        _store(spec, path, op, basis)
    except OSError as e:
        logger.warning("could not write spectrum cache %s: %s", path, e)
    return spec


def clear_cache(cache_dir: Optional[Path] = None) -> int:
    """Delete all cache entries; returns the number of spectra removed."""
    directory = expand_path(cache_dir) if cache_dir is not None else default_cache_dir()
    if not directory.is_dir():
        return 0
    removed = 0
    for entry in directory.glob("*.fidb"):
        entry.unlink()
        entry.with_suffix(".yaml").unlink(missing_ok=True)
        removed += 1
    return removed


def deltas_as_array(spec: Spectrum) -> np.ndarray:
    """Deltas as a 2-D array suitable for FIDB export (flat layouts become one row)."""
    return spec.deltas if spec.deltas.ndim == 2 else spec.deltas.reshape(1, -1)
