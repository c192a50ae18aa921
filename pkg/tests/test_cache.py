"""Tests for the spectrum cache."""

from unittest.mock import patch

import numpy as np
import yaml

from unsmear.cache import (
    CACHE_ENV_VAR,
    cache_key,
    cached_spectrum,
    clear_cache,
    default_cache_dir,
    deltas_as_array,
)
from unsmear.fileio import write_fidb
from unsmear.models import Strategy
from unsmear.operators import make_explicit, make_gaussian_blur
from unsmear.transforms import make_dft_basis, make_svd_basis, make_wavelet_basis


class TestDefaultCacheDir:
    def test_env_override(self, monkeypatch, tmp_path):
        monkeypatch.setenv(CACHE_ENV_VAR, str(tmp_path / "spectra"))
        assert default_cache_dir() == tmp_path / "spectra"

    def test_home_default(self, monkeypatch):
        monkeypatch.delenv(CACHE_ENV_VAR, raising=False)
        assert default_cache_dir().parts[-2:] == (".cache", "unsmear")


class TestCacheKey:
    def test_depends_on_everything(self):
        op = make_gaussian_blur((16, 16), 2.0, 3)
        basis = make_wavelet_basis((16, 16), levels=2)
        key = cache_key(op, basis, Strategy.PER_SUBBAND, 1e-12)
        assert key == cache_key(op, basis, Strategy.PER_SUBBAND, 1e-12)
        assert key != cache_key(op, basis, Strategy.EXACT, 1e-12)
        assert key != cache_key(op, basis, Strategy.PER_SUBBAND, 1e-9)
        other = make_gaussian_blur((16, 16), 1.0, 3)
        assert key != cache_key(other, basis, Strategy.PER_SUBBAND, 1e-12)


class TestCachedSpectrum:
    def test_miss_then_hit(self, tmp_path):
        op = make_gaussian_blur((16, 16), 2.0, 3)
        basis = make_dft_basis((16, 16))
        first = cached_spectrum(op, basis, cache_dir=tmp_path)
        assert len(list(tmp_path.glob("*.fidb"))) == 1

        with patch("unsmear.cache.compute_deltas") as compute:
            second = cached_spectrum(op, basis, cache_dir=tmp_path)
            compute.assert_not_called()
        np.testing.assert_array_equal(second.deltas, first.deltas)
        assert second.strategy == Strategy.FREQUENCY
        assert second.basis_id == basis.fingerprint()

    def test_sidecar(self, tmp_path):
        op = make_gaussian_blur((16, 16), 2.0, 3)
        cached_spectrum(op, make_dft_basis((16, 16)), cache_dir=tmp_path)
        sidecar = yaml.safe_load(next(tmp_path.glob("*.yaml")).read_text())
        assert sidecar["strategy"] == "frequency"
        assert sidecar["basis"] == "dft"
        assert sidecar["coefficient_shape"] == [16, 9]

    def test_flat_layout_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        op = make_explicit(rng.standard_normal((16, 16)), (4, 4))
        basis = make_svd_basis(op)
        first = cached_spectrum(op, basis, cache_dir=tmp_path)
        second = cached_spectrum(op, basis, cache_dir=tmp_path)
        assert second.deltas.shape == (16,)
        np.testing.assert_array_equal(second.deltas, first.deltas)

    def test_corrupt_entry_recomputed(self, tmp_path, caplog):
        op = make_gaussian_blur((16, 16), 2.0, 3)
        basis = make_dft_basis((16, 16))
        first = cached_spectrum(op, basis, cache_dir=tmp_path)
        entry = next(tmp_path.glob("*.fidb"))
        entry.write_bytes(b"garbage")

        again = cached_spectrum(op, basis, cache_dir=tmp_path)
        np.testing.assert_array_equal(again.deltas, first.deltas)
        assert "ignoring unreadable" in caplog.text

    def test_wrong_size_entry_ignored(self, tmp_path, caplog):
        op = make_gaussian_blur((16, 16), 2.0, 3)
        basis = make_dft_basis((16, 16))
        cached_spectrum(op, basis, cache_dir=tmp_path)
        entry = next(tmp_path.glob("*.fidb"))
        write_fidb(np.ones((2, 2)), entry)

        again = cached_spectrum(op, basis, cache_dir=tmp_path)
        assert again.deltas.shape == (16, 9)
        assert "ignoring spectrum cache entry" in caplog.text

    def test_invalid_deltas_recomputed(self, tmp_path, caplog):
        op = make_gaussian_blur((16, 16), 2.0, 3)
        basis = make_dft_basis((16, 16))
        first = cached_spectrum(op, basis, cache_dir=tmp_path)
        entry = next(tmp_path.glob("*.fidb"))
        for bad in (np.nan, -1.0):
            stored = np.array(first.deltas)
            stored[3, 4] = bad
            write_fidb(stored, entry)

            again = cached_spectrum(op, basis, cache_dir=tmp_path)
            np.testing.assert_array_equal(again.deltas, first.deltas)
        assert "ignoring invalid spectrum cache entry" in caplog.text


class TestClearCache:
    def test_removes_entries(self, tmp_path):
        op = make_gaussian_blur((16, 16), 2.0, 3)
        cached_spectrum(op, make_dft_basis((16, 16)), cache_dir=tmp_path)
        cached_spectrum(op, make_wavelet_basis((16, 16), levels=2), cache_dir=tmp_path)
        assert clear_cache(tmp_path) == 2
        assert list(tmp_path.iterdir()) == []

    def test_missing_directory(self, tmp_path):
        assert clear_cache(tmp_path / "nothing") == 0


class TestDeltasAsArray:
    def test_flat_becomes_row(self, tmp_path):
        op = make_explicit(np.diag([1.0, 2.0, 3.0, 4.0]), (2, 2))
        spec = cached_spectrum(op, make_svd_basis(op), cache_dir=tmp_path)
        assert deltas_as_array(spec).shape == (1, 4)
