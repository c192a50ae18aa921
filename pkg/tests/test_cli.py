"""Tests for CLI interface."""

import csv
from unittest.mock import patch

import numpy as np
from typer.testing import CliRunner

from unsmear.cli import app, parse_shape
from unsmear.fileio import read_fidb, write_fidb
from unsmear.models import FetchResult
from unsmear.phantoms import make_phantom

runner = CliRunner()


def _observation(tmp_path, name="y.fidb", value=None):
    path = tmp_path / name
    img = make_phantom("phantom:shapes", 32) if value is None else np.full((32, 32), value)
    write_fidb(img, path)
    return path


class TestVersion:
    def test_version_flag(self):
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert "unsmear version" in result.stdout

    def test_version_short_flag(self):
        result = runner.invoke(app, ["-v"])
        assert result.exit_code == 0
        assert "unsmear version" in result.stdout


class TestHelp:
    def test_help_flag(self):
        result = runner.invoke(app, ["--help"])
        assert result.exit_code == 0
        for command in ("degrade", "solve", "sweep", "psnr", "spectrum", "denoise"):
            assert command in result.stdout

    def test_solve_help(self):
        result = runner.invoke(app, ["solve", "--help"])
        assert result.exit_code == 0
        assert "--lambda" in result.stdout


class TestParseShape:
    def test_square(self):
        assert parse_shape("16") == (16, 16)

    def test_rows_cols(self):
        assert parse_shape("8x12") == (8, 12)


class TestDegrade:
    def test_identity_without_noise(self, tmp_path):
        out = tmp_path / "obs.pgm"
        result = runner.invoke(
            app, ["degrade", "phantom:shapes", str(out), "--op", "identity", "--size", "32"]
        )
        assert result.exit_code == 0
        assert "Wrote" in result.stdout
        np.testing.assert_array_equal(
            read_fidb(tmp_path / "obs.fidb"), make_phantom("phantom:shapes", 32)
        )
        assert out.exists()

    def test_noise_is_seeded(self, tmp_path):
        args = ["phantom:bars", "--op", "identity", "--size", "32", "--sigma", "5"]
        runner.invoke(app, ["degrade", args[0], str(tmp_path / "a"), *args[1:], "--seed", "1"])
        runner.invoke(app, ["degrade", args[0], str(tmp_path / "b"), *args[1:], "--seed", "1"])
        np.testing.assert_array_equal(
            read_fidb(tmp_path / "a.fidb"), read_fidb(tmp_path / "b.fidb")
        )

    def test_bad_operator(self, tmp_path):
        result = runner.invoke(
            app, ["degrade", "phantom:shapes", str(tmp_path / "o"), "--op", "motion"]
        )
        assert result.exit_code == 1
        assert "Error" in result.stdout


class TestSolve:
    def test_ida_identity_zero_lambda_returns_observation(self, tmp_path):
        y = _observation(tmp_path)
        out = tmp_path / "x.fidb"
        result = runner.invoke(
            app,
            [
                "solve", str(y), str(out),
                "--op", "identity",
                "--method", "ida",
                "--lambda", "0",
                "--denoiser", "wavelet-soft:levels=2",
                "--max-iters", "3",
            ],
        )
        assert result.exit_code == 0
        np.testing.assert_array_equal(read_fidb(out), read_fidb(y))
        assert (tmp_path / "x.pgm").exists()

    def test_trace_csv(self, tmp_path):
        y = _observation(tmp_path)
        trace = tmp_path / "trace.csv"
        result = runner.invoke(
            app,
            [
                "solve", str(y), str(tmp_path / "x"),
                "--op", "identity",
                "--method", "ida",
                "--lambda", "0",
                "--denoiser", "wavelet-soft:levels=2",
                "--max-iters", "3",
                "--rel-tol", "0",
                "--truth", str(y),
                "--trace", str(trace),
            ],
        )
        assert result.exit_code == 0
        with open(trace, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        assert rows[0]["psnr"] == "inf"

    def test_fida_on_blur(self, tmp_path):
        y = _observation(tmp_path)
        out = tmp_path / "x.fidb"
        result = runner.invoke(
            app,
            [
                "solve", str(y), str(out),
                "--op", "blur:sigma=1.0,radius=3",
                "--method", "fida",
                "--lambda", "1",
                "--denoiser", "wavelet-soft:levels=2",
                "--max-iters", "5",
                "--cache-dir", str(tmp_path / "cache"),
            ],
        )
        assert result.exit_code == 0
        assert read_fidb(out).shape == (32, 32)
        assert list((tmp_path / "cache").glob("*.fidb"))

    def test_custom_init_rejected(self, tmp_path):
        y = _observation(tmp_path)
        result = runner.invoke(app, ["solve", str(y), str(tmp_path / "x"), "--init", "custom"])
        assert result.exit_code == 1

    def test_missing_observation(self, tmp_path):
        result = runner.invoke(app, ["solve", str(tmp_path / "absent.fidb"), str(tmp_path / "x")])
        assert result.exit_code == 1
        assert "Error" in result.stdout


class TestPsnr:
    def test_identical(self, tmp_path):
        a = _observation(tmp_path, "a.fidb", 10.0)
        result = runner.invoke(app, ["psnr", str(a), str(a)])
        assert result.exit_code == 0
        assert "inf dB" in result.stdout

    def test_unit_error(self, tmp_path):
        a = _observation(tmp_path, "a.fidb", 10.0)
        b = _observation(tmp_path, "b.fidb", 11.0)
        result = runner.invoke(app, ["psnr", str(a), str(b)])
        assert result.exit_code == 0
        assert "48.1308 dB" in result.stdout

    def test_shape_mismatch(self, tmp_path):
        a = _observation(tmp_path, "a.fidb", 10.0)
        b = tmp_path / "b.fidb"
        write_fidb(np.zeros((4, 4)), b)
        result = runner.invoke(app, ["psnr", str(a), str(b)])
        assert result.exit_code == 1


class TestSpectrum:
    def test_gain_spectrum(self, tmp_path):
        out = tmp_path / "deltas.fidb"
        result = runner.invoke(
            app,
            [
                "spectrum",
                "--op", "gain",
                "--shape", "16",
                "--out", str(out),
                "--cache-dir", str(tmp_path / "cache"),
            ],
        )
        assert result.exit_code == 0
        assert "Spectrum" in result.stdout
        assert read_fidb(out).shape == (16, 16)

    def test_clear_cache(self, tmp_path):
        cache = str(tmp_path / "cache")
        runner.invoke(app, ["spectrum", "--op", "gain", "--shape", "16", "--cache-dir", cache])
        result = runner.invoke(app, ["spectrum", "--clear-cache", "--cache-dir", cache])
        assert result.exit_code == 0
        assert "Removed 1 cached spectra" in result.stdout

    def test_bad_shape(self, tmp_path):
        result = runner.invoke(
            app, ["spectrum", "--shape", "axb", "--cache-dir", str(tmp_path)]
        )
        assert result.exit_code == 1


class TestDenoise:
    def test_internal(self, tmp_path):
        src = _observation(tmp_path, "in.fidb")
        out = tmp_path / "out.fidb"
        result = runner.invoke(
            app, ["denoise", str(src), str(out), "0", "--denoiser", "wavelet-soft:levels=2"]
        )
        assert result.exit_code == 0
        np.testing.assert_array_equal(read_fidb(out), read_fidb(src))

    def test_external_refused(self, tmp_path):
        src = _observation(tmp_path, "in.fidb")
        result = runner.invoke(
            app,
            ["denoise", str(src), str(tmp_path / "o.fidb"), "1", "--denoiser", "external:cmd=x"],
        )
        assert result.exit_code == 1


class TestPresets:
    def test_lists_presets(self):
        result = runner.invoke(app, ["presets"])
        assert result.exit_code == 0
        assert "deblur" in result.stdout
        assert "severe-blur" in result.stdout


class TestSweep:
    def _args(self, tmp_path):
        return [
            "--image", "phantom:shapes",
            "--size", "32",
            "--sigma", "2",
            "--method", "ida",
            "--method", "d-fida",
            "--denoiser", "wavelet-soft:levels=2",
            "--lambda", "0.5",
            "--lambda", "2",
            "--runs", "1",
            "--max-iters", "3",
            "--workers", "2",
            "--output", str(tmp_path / "res"),
            "--cache-dir", str(tmp_path / "cache"),
        ]

    def test_from_flags(self, tmp_path):
        result = runner.invoke(
            app, ["sweep", "--op", "blur:sigma=1.0,radius=3", *self._args(tmp_path)]
        )
        assert result.exit_code == 0
        with open(tmp_path / "res" / "table.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["method"] for r in rows] == ["IDA", "D-FIDA"]
        assert (tmp_path / "res" / "images" / "shapes__truth.pgm").exists()

    def test_preset_with_overrides(self, tmp_path):
        result = runner.invoke(
            app, ["sweep", "--preset", "gain", "--no-images", *self._args(tmp_path)]
        )
        assert result.exit_code == 0
        with open(tmp_path / "res" / "table.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["operator"].startswith("gain:")
        assert not (tmp_path / "res" / "images").exists()

    def test_spec_file(self, tmp_path):
        spec = tmp_path / "exp.yaml"
        spec.write_text(
            "operator: identity\n"
            "noise_sigmas: [1]\n"
            "methods:\n"
            "  - {label: IDA, method: ida}\n"
        )
        args = [
            "sweep", str(spec),
            "--image", "phantom:shapes",
            "--size", "32",
            "--lambda", "1",
            "--runs", "1",
            "--max-iters", "2",
            "--denoiser", "wavelet-soft:levels=2",
            "--output", str(tmp_path / "res"),
            "--no-images",
        ]
        result = runner.invoke(app, args)
        assert result.exit_code == 0
        assert (tmp_path / "res" / "runs.csv").exists()

    def test_missing_arguments(self):
        result = runner.invoke(app, ["sweep", "--op", "identity"])
        assert result.exit_code == 1
        assert "Error" in result.stdout

    def test_spec_and_preset(self, tmp_path):
        spec = tmp_path / "exp.yaml"
        spec.write_text("{}\n")
        result = runner.invoke(app, ["sweep", str(spec), "--preset", "gain"])
        assert result.exit_code == 1

    def test_unknown_method(self, tmp_path):
        result = runner.invoke(
            app, ["sweep", "--op", "identity", "--sigma", "1", "--method", "admm"]
        )
        assert result.exit_code == 1


class TestFetchImages:
    @patch("unsmear.cli.fetch_images")
    def test_success(self, mock_fetch, tmp_path):
        mock_fetch.return_value = [
            FetchResult(name="hill", path=str(tmp_path / "hill.pgm"), bytes_written=10),
            FetchResult(name="boats", path=str(tmp_path / "boats.pgm"), skipped=True),
        ]
        result = runner.invoke(
            app, ["fetch-images", "--base-url", "https://mirror.test", "--dest", str(tmp_path)]
        )
        assert result.exit_code == 0
        assert "hill" in result.stdout
        assert "already present" in result.stdout

    @patch("unsmear.cli.fetch_images")
    def test_failure_exit_code(self, mock_fetch, tmp_path):
        mock_fetch.return_value = [
            FetchResult(name="hill", path="hill.pgm", success=False, error="HTTP 404"),
        ]
        result = runner.invoke(
            app, ["fetch-images", "--base-url", "https://mirror.test", "--name", "hill"]
        )
        assert result.exit_code == 1
        assert "1 of 1 downloads failed" in result.stdout

    def test_base_url_required(self):
        result = runner.invoke(app, ["fetch-images"])
        assert result.exit_code != 0
