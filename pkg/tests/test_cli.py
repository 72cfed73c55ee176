"""End-to-end tests for the command-line interface."""

import re
import subprocess
import sys

import numpy as np
import pytest

from apapstitch import load_image, save_image, write_correspondences
from apapstitch.cli import RunConfig, load_config_file, run_cli
from apapstitch.errors import ConfigFileError
from apapstitch.matching import CorrespondenceSet, read_correspondences

from conftest import smooth_image, translated_pair


def _grid_matches(width, height, shift=(0.0, 0.0), margin=6.0, step=12.0):
    xs = np.arange(margin, width - margin, step)
    ys = np.arange(margin, height - margin, step)
    gx, gy = np.meshgrid(xs, ys)
    src = np.column_stack([gx.ravel(), gy.ravel()])
    return CorrespondenceSet(src, src + np.asarray(shift))


@pytest.fixture()
def identity_pair(tmp_path):
    img = smooth_image(77, 44, 60)
    src_path = tmp_path / "src.png"
    dst_path = tmp_path / "dst.png"
    save_image(img, src_path)
    save_image(img, dst_path)
    matches_path = tmp_path / "matches.csv"
    write_correspondences(_grid_matches(60, 44), matches_path)
    return src_path, dst_path, matches_path


@pytest.fixture()
def shifted_pair(tmp_path):
    src, dst = translated_pair(15, 48, 64, tx=6, ty=2)
    src_path = tmp_path / "src.png"
    dst_path = tmp_path / "dst.png"
    save_image(src, src_path)
    save_image(dst, dst_path)
    matches_path = tmp_path / "matches.csv"
    write_correspondences(_grid_matches(64, 48, shift=(6.0, 2.0), margin=8.0), matches_path)
    return src_path, dst_path, matches_path


class TestStitch:
    def test_identity_linear_reproduces_input(self, identity_pair, tmp_path, capsys):
        src_path, dst_path, matches_path = identity_pair
        out_path = tmp_path / "out.png"
        code = run_cli(
            [
                "stitch",
                str(src_path),
                str(dst_path),
                "--matches",
                str(matches_path),
                "--linear",
                "--out",
                str(out_path),
            ]
        )
        assert code == 0
        stdout = capsys.readouterr().out
        canvas = re.search(r"canvas = (\d+)x(\d+) at \((-?\d+), (-?\d+)\)", stdout)
        assert canvas is not None
        x0, y0 = int(canvas.group(3)), int(canvas.group(4))
        reference = load_image(src_path)
        composite = load_image(out_path)
        region = composite.data[-y0 : -y0 + 44, -x0 : -x0 + 60]
        assert np.max(np.abs(region - reference.data)) <= 1.0

    def test_seam_mode_reports_energy(self, shifted_pair, tmp_path, capsys):
        src_path, dst_path, matches_path = shifted_pair
        out_path = tmp_path / "seamed.png"
        code = run_cli(
            ["stitch", str(src_path), str(dst_path), "--matches", str(matches_path), "--out", str(out_path)]
        )
        assert code == 0
        stdout = capsys.readouterr().out
        assert out_path.exists()
        energy = re.search(r"seam_energy = ([0-9.]+)", stdout)
        assert energy is not None
        assert float(energy.group(1)) >= 0.0

    def test_dump_matches_reingests_to_identical_output(self, shifted_pair, tmp_path, capsys):
        src_path, dst_path, matches_path = shifted_pair
        first = tmp_path / "first.png"
        dumped = tmp_path / "dumped.csv"
        assert (
            run_cli(
                [
                    "stitch",
                    str(src_path),
                    str(dst_path),
                    "--matches",
                    str(matches_path),
                    "--linear",
                    "--out",
                    str(first),
                    "--dump-matches",
                    str(dumped),
                ]
            )
            == 0
        )
        original = read_correspondences(matches_path)
        rewritten = read_correspondences(dumped)
        np.testing.assert_allclose(rewritten.src, original.src, atol=1e-6)
        np.testing.assert_allclose(rewritten.dst, original.dst, atol=1e-6)

        second = tmp_path / "second.png"
        assert (
            run_cli(
                [
                    "stitch",
                    str(src_path),
                    str(dst_path),
                    "--matches",
                    str(dumped),
                    "--linear",
                    "--out",
                    str(second),
                ]
            )
            == 0
        )
        capsys.readouterr()
        assert first.read_bytes() == second.read_bytes()

    def test_unknown_flag_is_usage_error(self, capsys):
        assert run_cli(["stitch", "a.png", "b.png", "--frobnicate"]) == 1
        capsys.readouterr()

    def test_missing_input_is_data_error(self, tmp_path, capsys):
        missing = tmp_path / "missing.png"
        other = tmp_path / "other.png"
        assert run_cli(["stitch", str(missing), str(other)]) == 2
        capsys.readouterr()

    def test_degenerate_matches_are_numerical_error(self, identity_pair, tmp_path, capsys):
        src_path, dst_path, _ = identity_pair
        xs = np.linspace(5.0, 55.0, 8)
        collinear = np.column_stack([xs, 0.5 * xs + 3.0])
        bad = tmp_path / "collinear.csv"
        write_correspondences(CorrespondenceSet(collinear, collinear + 2.0), bad)
        assert run_cli(["stitch", str(src_path), str(dst_path), "--matches", str(bad)]) == 3
        capsys.readouterr()


class TestDiff:
    def test_writes_residual_image_and_count(self, shifted_pair, tmp_path, capsys):
        src_path, dst_path, matches_path = shifted_pair
        out_path = tmp_path / "residual.png"
        code = run_cli(
            ["diff", str(src_path), str(dst_path), "--matches", str(matches_path), "--out", str(out_path)]
        )
        assert code == 0
        assert out_path.exists()
        stdout = capsys.readouterr().out
        count = re.search(r"residual_nonzero = (\d+)", stdout)
        assert count is not None
        assert int(count.group(1)) == 0


class TestConfigPrecedence:
    def _sigma_line(self, capsys, argv):
        run_cli(argv)
        stdout = capsys.readouterr().out
        assert "# effective config" in stdout
        match = re.search(r"^sigma = (\S+)$", stdout, flags=re.M)
        assert match is not None
        return match.group(1)

    def test_defaults_then_file_then_flag(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.png")
        base = ["stitch", missing, missing]
        assert self._sigma_line(capsys, base) == "8.0"

        cfg = tmp_path / "params.cfg"
        cfg.write_text("# tuning\nsigma = 5.0\nwindow = 21\n")
        assert self._sigma_line(capsys, base + ["--config", str(cfg)]) == "5.0"
        assert self._sigma_line(capsys, base + ["--config", str(cfg), "--sigma", "6.0"]) == "6.0"

    def test_config_file_parsing(self, tmp_path):
        cfg = tmp_path / "params.cfg"
        cfg.write_text("sigma = 4.5\ncell_size = 4  # inline comment\n\n")
        values = load_config_file(str(cfg))
        assert values == {"sigma": 4.5, "cell_size": 4}
        assert isinstance(values["cell_size"], int)

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "params.cfg"
        cfg.write_text("sigmoid = 3.0\n")
        with pytest.raises(ConfigFileError):
            load_config_file(str(cfg))
        missing = str(tmp_path / "nope.png")
        assert run_cli(["stitch", missing, missing, "--config", str(cfg)]) == 2
        capsys.readouterr()

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "params.cfg"
        cfg.write_text("sigma 4.5\n")
        with pytest.raises(ConfigFileError):
            load_config_file(str(cfg))

    def test_run_config_factories_carry_values(self):
        cfg = RunConfig(sigma=5.0, window=21, omega=1500.0, epsilon=80.0)
        assert cfg.warp_config().sigma == 5.0
        assert cfg.search_config().window == 21
        assert cfg.search_config().accept_omega == 1500.0
        assert cfg.adapt_config().epsilon == 80.0


class TestBench:
    def test_smoke_produces_all_artifacts(self, tmp_path, capsys):
        outdir = tmp_path / "bench"
        code = run_cli(
            [
                "bench",
                "--scene",
                "two-plane",
                "--width",
                "128",
                "--height",
                "96",
                "--parallax",
                "6",
                "--matches-count",
                "25",
                "--seed",
                "3",
                "--out",
                str(outdir),
            ]
        )
        assert code == 0
        stdout = capsys.readouterr().out
        assert "method rmse insertions_accepted insertions_tried" in stdout
        expected = [
            "rmse.csv",
            "insertions.csv",
            "matches_final.csv",
            "residual_global_h.png",
            "residual_apap.png",
            "residual_apap_ci.png",
            "composite_global_h.png",
            "composite_apap.png",
            "composite_apap_ci.png",
            "figure_rmse.png",
            "figure_residuals.png",
            "figure_insertions.png",
            "scene_source.png",
            "scene_target.png",
            "scene_h1.txt",
            "scene_h2.txt",
        ]
        for name in expected:
            assert (outdir / name).exists(), name
        header, *rows = (outdir / "rmse.csv").read_text().strip().split("\n")
        assert header.split(",")[0] == "method"
        assert [r.split(",")[0] for r in rows] == ["global_h", "apap", "apap_ci"]


class TestEntryPoint:
    def test_installed_script_maps_data_errors(self, tmp_path):
        missing = str(tmp_path / "missing.png")
        proc = subprocess.run(
            [sys.executable, "-m", "apapstitch.cli", "stitch", missing, missing],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 2
        assert "error:" in proc.stderr
