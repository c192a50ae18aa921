"""Tests for denoisers."""

import stat
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from unsmear.denoisers import (
    BRIDGE_DIR_PREFIX,
    ExternalDenoiser,
    ThresholdDenoiser,
    build_denoiser,
    format_lambda,
    hard_threshold,
    oracle_denoise,
    soft_threshold,
)
from unsmear.descriptors import parse_denoiser
from unsmear.errors import DenoiserError, ShapeError
from unsmear.fileio import write_fidb
from unsmear.models import DenoiserKind
from unsmear.transforms import make_canonical_basis, make_dft_basis, make_wavelet_basis

SRC_DIR = Path(__file__).resolve().parent.parent / "src"


def _script(tmp_path: Path, name: str, body: str) -> Path:
    path = tmp_path / name
    path.write_text("#!/bin/sh\n" + body + "\n")
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return path


class TestSoftThreshold:
    def test_shrinks(self):
        assert soft_threshold(3.0, 1.0) == 2.0
        assert soft_threshold(-3.0, 1.0) == -2.0

    def test_kills_small(self):
        assert soft_threshold(-1.0, 2.0) == 0.0

    def test_zero_threshold_is_identity(self):
        v = np.array([-2.5, 0.0, 4.0])
        np.testing.assert_array_equal(soft_threshold(v, 0.0), v)

    def test_per_entry_threshold(self):
        out = soft_threshold(np.array([3.0, 3.0]), np.array([1.0, 4.0]))
        np.testing.assert_array_equal(out, [2.0, 0.0])

    def test_complex_shrinks_magnitude(self):
        out = soft_threshold(np.array([3.0 + 4.0j, 0.0j]), 1.0)
        np.testing.assert_allclose(out, [2.4 + 3.2j, 0.0])

    def test_one_lipschitz_and_odd(self):
        rng = np.random.default_rng(3)
        for lam in (0.0, 0.3, 2.0):
            a, b = rng.standard_normal((2, 1000)) * 3
            gap = np.abs(soft_threshold(a, lam) - soft_threshold(b, lam))
            assert np.all(gap <= np.abs(a - b) + 1e-15)
            np.testing.assert_array_equal(soft_threshold(-a, lam), -soft_threshold(a, lam))

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            soft_threshold(1.0, -0.1)


class TestHardThreshold:
    def test_keeps_or_kills(self):
        out = hard_threshold(np.array([3.0, -0.5, 1.0]), 1.0)
        np.testing.assert_array_equal(out, [3.0, 0.0, 0.0])


class TestFormatLambda:
    def test_round_trips(self):
        for lam in (0.0, 1.0, 0.1, 1 / 3, 12.5, 1e-7):
            assert float(format_lambda(lam)) == lam

    def test_plain_decimal(self):
        assert format_lambda(2.0) == "2"
        assert "e" not in format_lambda(1e-7)


class TestThresholdDenoiser:
    def test_zero_lambda_returns_input(self):
        d = ThresholdDenoiser(make_wavelet_basis((16, 16), levels=2))
        x = np.random.default_rng(0).standard_normal((16, 16))
        np.testing.assert_array_equal(d.denoise(x, 0.0), x)

    def test_canonical_pixels(self):
        d = ThresholdDenoiser(make_canonical_basis((1, 2)))
        np.testing.assert_array_equal(d(np.array([[3.0, -1.0]]), 1.0), [[2.0, 0.0]])

    def test_coarse_band_preserved(self):
        basis = make_wavelet_basis((16, 16), taps=6, levels=2)
        d = ThresholdDenoiser(basis)
        out = d.denoise(np.full((16, 16), 100.0), 1e6)
        np.testing.assert_allclose(out, 100.0)

    def test_include_coarse(self):
        basis = make_wavelet_basis((16, 16), taps=6, levels=2)
        d = ThresholdDenoiser(basis, include_coarse=True)
        np.testing.assert_allclose(d.denoise(np.full((16, 16), 100.0), 1e6), 0.0)

    def test_matches_coefficient_shrinkage(self):
        basis = make_wavelet_basis((16, 16), taps=4, levels=2)
        d = ThresholdDenoiser(basis, include_coarse=True)
        x = np.random.default_rng(1).standard_normal((16, 16)) * 10
        expected = basis.synthesize(soft_threshold(basis.analyze(x), 3.0))
        np.testing.assert_allclose(d.denoise(x, 3.0), expected)

    def test_dft_output_is_real(self):
        d = ThresholdDenoiser(make_dft_basis((8, 8)))
        out = d.denoise(np.random.default_rng(2).standard_normal((8, 8)), 0.5)
        assert out.dtype == np.float64

    def test_hard_rule(self):
        d = ThresholdDenoiser(make_canonical_basis((1, 3)), rule="hard")
        assert d.kind == DenoiserKind.WAVELET_HARD
        np.testing.assert_array_equal(d.denoise(np.array([[3.0, 0.5, -2.0]]), 1.0), [[3.0, 0, -2]])

    def test_non_expansive(self):
        rng = np.random.default_rng(4)
        for basis in (make_wavelet_basis((16, 16), taps=6, levels=2), make_dft_basis((16, 16))):
            d = ThresholdDenoiser(basis)
            for _ in range(20):
                x, z = rng.standard_normal((2, 16, 16)) * 5
                gap = np.linalg.norm(d.denoise(x, 1.5) - d.denoise(z, 1.5))
                assert gap <= np.linalg.norm(x - z) * (1 + 1e-12)

    def test_output_shrinks_as_lambda_grows(self):
        d = ThresholdDenoiser(make_wavelet_basis((16, 16), taps=4, levels=2))
        x = np.random.default_rng(5).standard_normal((16, 16)) * 5
        norms = [np.linalg.norm(d.denoise(x, lam)) for lam in (0.0, 0.5, 1.0, 2.0, 5.0, 50.0)]
        assert all(later <= earlier + 1e-12 for earlier, later in zip(norms, norms[1:]))
        assert norms[-1] < norms[0]

    def test_negative_lambda(self):
        d = ThresholdDenoiser(make_canonical_basis((2, 2)))
        with pytest.raises(ValueError):
            d.denoise(np.zeros((2, 2)), -1.0)

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            ThresholdDenoiser(make_canonical_basis((2, 2)), rule="garrote")


class TestExternalDenoiser:
    def test_no_op_bridge(self, tmp_path):
        script = _script(tmp_path, "copy.sh", 'cp "$1" "$2"')
        x = np.random.default_rng(3).standard_normal((8, 8))
        out = ExternalDenoiser(str(script)).denoise(x, 0.25)
        assert out.tobytes() == x.tobytes()

    def test_lambda_passed_verbatim(self, tmp_path):
        log = tmp_path / "args.txt"
        script = _script(tmp_path, "log.sh", f'echo "$3" > {log}\ncp "$1" "$2"')
        ExternalDenoiser(str(script)).denoise(np.zeros((2, 2)), 0.1)
        assert log.read_text().strip() == "0.1"

    def test_temp_dir_removed_on_success(self, tmp_path, monkeypatch):
        monkeypatch.setattr(tempfile, "tempdir", str(tmp_path))
        script = _script(tmp_path, "copy.sh", 'cp "$1" "$2"')
        ExternalDenoiser(str(script)).denoise(np.zeros((2, 2)), 1.0)
        assert not list(tmp_path.glob(f"{BRIDGE_DIR_PREFIX}*"))

    def test_nonzero_exit(self, tmp_path):
        script = _script(tmp_path, "fail.sh", 'echo "bad input" >&2\nexit 3')
        with pytest.raises(DenoiserError, match="code 3: bad input"):
            ExternalDenoiser(str(script)).denoise(np.zeros((2, 2)), 1.0)

    def test_temp_dir_kept_on_failure(self, tmp_path, monkeypatch):
        monkeypatch.setattr(tempfile, "tempdir", str(tmp_path))
        script = _script(tmp_path, "fail.sh", "exit 1")
        with pytest.raises(DenoiserError, match="files kept"):
            ExternalDenoiser(str(script)).denoise(np.zeros((2, 2)), 1.0)
        kept = list(tmp_path.glob(f"{BRIDGE_DIR_PREFIX}*"))
        assert len(kept) == 1
        assert (kept[0] / "input.fidb").exists()

    def test_missing_output(self, tmp_path):
        script = _script(tmp_path, "quiet.sh", "exit 0")
        with pytest.raises(DenoiserError, match="no output"):
            ExternalDenoiser(str(script)).denoise(np.zeros((2, 2)), 1.0)

    def test_wrong_shape(self, tmp_path):
        small = tmp_path / "small.fidb"
        write_fidb(np.zeros((1, 1)), small)
        script = _script(tmp_path, "shrink.sh", f'cp {small} "$2"')
        with pytest.raises(DenoiserError, match="shape"):
            ExternalDenoiser(str(script)).denoise(np.zeros((2, 2)), 1.0)

    def test_malformed_output(self, tmp_path):
        script = _script(tmp_path, "junk.sh", 'echo junk > "$2"')
        with pytest.raises(DenoiserError, match="malformed"):
            ExternalDenoiser(str(script)).denoise(np.zeros((2, 2)), 1.0)

    def test_timeout(self, tmp_path):
        script = _script(tmp_path, "slow.sh", "exec sleep 5")
        with pytest.raises(DenoiserError, match="timed out"):
            ExternalDenoiser(str(script), timeout=0.2).denoise(np.zeros((2, 2)), 1.0)

    def test_missing_executable(self, tmp_path):
        with pytest.raises(DenoiserError, match="cannot run"):
            ExternalDenoiser(str(tmp_path / "absent")).denoise(np.zeros((2, 2)), 1.0)

    def test_command_string_is_split(self):
        d = ExternalDenoiser("tool --sigma 'a b'")
        assert d.args == ["tool", "--sigma", "a b"]

    def test_shells_to_internal_denoiser(self, monkeypatch):
        monkeypatch.setenv("PYTHONPATH", str(SRC_DIR))
        command = [sys.executable, "-m", "unsmear.cli", "denoise", "--denoiser", "wavelet-soft"]
        bridge = ExternalDenoiser(command)
        internal = build_denoiser(parse_denoiser("wavelet-soft"), (16, 16))
        x = np.random.default_rng(4).standard_normal((16, 16)) * 20
        np.testing.assert_allclose(bridge.denoise(x, 1.7), internal.denoise(x, 1.7), atol=1e-12)


class TestOracleDenoise:
    def test_keeps_strong_coefficients(self):
        out = oracle_denoise(np.array([2.3, 1.2]), np.array([2.0, 0.5]), np.array([1.0, 1.0]))
        np.testing.assert_array_equal(out, [2.3, 0.0])

    def test_zero_delta_killed(self):
        out = oracle_denoise(np.array([5.0]), np.array([100.0]), np.array([0.0]))
        np.testing.assert_array_equal(out, [0.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            oracle_denoise(np.zeros(2), np.zeros(3), np.zeros(2))


class TestBuildDenoiser:
    def test_wavelet_soft(self):
        d = build_denoiser(parse_denoiser("wavelet-soft:taps=4,levels=2"), (16, 16))
        assert isinstance(d, ThresholdDenoiser)
        assert d.basis.describe() == "wavelet(taps=4,levels=2)"

    def test_canonical_hard(self):
        d = build_denoiser(parse_denoiser("wavelet-hard:basis=canonical"), (4, 4))
        assert d.rule == "hard"
        assert d.basis.kind == "canonical"

    def test_external(self):
        d = build_denoiser(parse_denoiser("external:cmd=/opt/bm3d --fast,timeout=5"), (4, 4))
        assert isinstance(d, ExternalDenoiser)
        assert d.args == ["/opt/bm3d", "--fast"]
        assert d.timeout == 5.0
