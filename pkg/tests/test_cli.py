"""End-to-end tests for the command-line interface."""

import numpy as np
import pytest
from click.testing import CliRunner

from emagan.cli import main
from emagan.dataio import ema_write, wav_read, wav_write, ema_read
from emagan.models import CHANNEL_NAMES, EmaTrajectory, N_CHANNELS
from emagan.physics import Waveform
from emagan.analysis import REPORT_HEADER


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def wav_dir(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        wav_write(d / f"w{i}.wav", Waveform(rng.uniform(-0.1, 0.1, 20480)))
    return d


@pytest.fixture()
def ema_csv(tmp_path):
    rng = np.random.default_rng(1)
    t = np.arange(64) / 64
    data = np.stack(
        [0.4 * np.sin(2 * np.pi * t + rng.uniform(0, 6)) for _ in range(N_CHANNELS)]
    )
    path = tmp_path / "traj.ema.csv"
    ema_write(path, EmaTrajectory(data))
    return path


def err_text(result):
    return (result.stderr or "") + result.output


class TestTrainCommand:
    def test_short_run_writes_outputs(self, runner, wav_dir, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(
            main,
            [
                "train", "--data", str(wav_dir), "--out", str(out),
                "--steps", "1", "--batch", "1", "--n-critic", "1",
                "--checkpoint-every", "0", "--no-figures", "--phys",
                "frozen-random",
            ],
        )
        assert result.exit_code == 0, result.output
        assert (out / "metrics.csv").exists()
        assert (out / "checkpoint_final.ckpt").exists()
        assert "step=1" in result.output
        assert "done steps=1" in result.output

    def test_quiet_suppresses_steps(self, runner, wav_dir, tmp_path):
        out = tmp_path / "runq"
        result = runner.invoke(
            main,
            [
                "train", "--data", str(wav_dir), "--out", str(out),
                "--steps", "1", "--batch", "1", "--n-critic", "1",
                "--checkpoint-every", "0", "--no-figures", "--quiet",
                "--phys", "frozen-random",
            ],
        )
        assert result.exit_code == 0
        assert "step=1 " not in result.output

    def test_missing_data_dir_fails(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")],
        )
        assert result.exit_code == 1
        assert "error:" in err_text(result)

    def test_bad_config_fails(self, runner, wav_dir, tmp_path):
        result = runner.invoke(
            main,
            [
                "train", "--data", str(wav_dir), "--out", str(tmp_path / "o"),
                "--steps", "1", "--batch", "0",
            ],
        )
        assert result.exit_code == 1
        assert "batch_size" in err_text(result)


class TestGenerateCommand:
    @pytest.fixture()
    def checkpoint(self, runner, wav_dir, tmp_path):
        out = tmp_path / "trained"
        result = runner.invoke(
            main,
            [
                "train", "--data", str(wav_dir), "--out", str(out),
                "--steps", "1", "--batch", "1", "--n-critic", "1",
                "--checkpoint-every", "0", "--no-figures", "--quiet",
                "--phys", "frozen-random",
            ],
        )
        assert result.exit_code == 0, result.output
        return out / "checkpoint_final.ckpt"

    def test_writes_pairs(self, runner, checkpoint, tmp_path):
        out = tmp_path / "gen"
        result = runner.invoke(
            main,
            [
                "generate", "--checkpoint", str(checkpoint), "--num", "2",
                "--seed", "5", "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        for i in range(2):
            traj = ema_read(out / f"{i:03d}.ema.csv")
            assert traj.channels.shape == (13, 256)
            wav = wav_read(out / f"{i:03d}.wav")
            assert wav.length == 20480
            assert np.abs(wav.samples).max() <= 1.0

    def test_num_zero_writes_nothing(self, runner, checkpoint, tmp_path):
        out = tmp_path / "none"
        result = runner.invoke(
            main,
            ["generate", "--checkpoint", str(checkpoint), "--num", "0", "--out", str(out)],
        )
        assert result.exit_code == 0
        assert not list(out.glob("*")) if out.exists() else True

    def test_seed_determinism(self, runner, checkpoint, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            result = runner.invoke(
                main,
                [
                    "generate", "--checkpoint", str(checkpoint), "--num", "1",
                    "--seed", "9", "--out", str(out),
                ],
            )
            assert result.exit_code == 0
            outs.append((out / "000.wav").read_bytes())
        assert outs[0] == outs[1]

    def test_missing_checkpoint_fails(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["generate", "--checkpoint", str(tmp_path / "no.ckpt"), "--out", str(tmp_path)],
        )
        assert result.exit_code == 1
        assert "error:" in err_text(result)


class TestSynthCommand:
    def test_synthesizes_wav(self, runner, ema_csv, tmp_path):
        out = tmp_path / "audio.wav"
        result = runner.invoke(
            main, ["synth", "--ema", str(ema_csv), "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        wav = wav_read(out)
        assert wav.length == 64 * 80

    def test_frozen_random_kind(self, runner, ema_csv, tmp_path):
        out = tmp_path / "fr.wav"
        result = runner.invoke(
            main,
            ["synth", "--ema", str(ema_csv), "--out", str(out), "--phys", "frozen-random"],
        )
        assert result.exit_code == 0
        assert out.exists()

    def test_rejects_unknown_kind(self, runner, ema_csv, tmp_path):
        result = runner.invoke(
            main,
            ["synth", "--ema", str(ema_csv), "--out", str(tmp_path / "x.wav"), "--phys", "neural"],
        )
        assert result.exit_code == 2  # usage error from the choice validation

    def test_missing_input_fails(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["synth", "--ema", str(tmp_path / "no.csv"), "--out", str(tmp_path / "x.wav")],
        )
        assert result.exit_code == 1


class TestAnalyzeDtwCorr:
    def test_stdout_report(self, runner, ema_csv):
        result = runner.invoke(
            main,
            ["analyze", "dtw-corr", "--gen", str(ema_csv), "--real", str(ema_csv)],
        )
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert lines[0] == REPORT_HEADER
        assert len(lines) == 13
        for line in lines[1:]:
            assert float(line.split(",")[2]) == 1.0

    def test_file_output_with_figure(self, runner, ema_csv, tmp_path):
        out = tmp_path / "report.csv"
        result = runner.invoke(
            main,
            [
                "analyze", "dtw-corr", "--gen", str(ema_csv), "--real", str(ema_csv),
                "--out", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        assert out.exists()
        assert (tmp_path / "report.png").exists()
        assert "figure:" in result.output

    def test_no_figures_flag(self, runner, ema_csv, tmp_path):
        out = tmp_path / "report.csv"
        result = runner.invoke(
            main,
            [
                "analyze", "dtw-corr", "--gen", str(ema_csv), "--real", str(ema_csv),
                "--out", str(out), "--no-figures",
            ],
        )
        assert result.exit_code == 0
        assert out.exists()
        assert not (tmp_path / "report.png").exists()

    def test_bad_input_fails(self, runner, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,trajectory\n")
        result = runner.invoke(
            main, ["analyze", "dtw-corr", "--gen", str(bad), "--real", str(bad)]
        )
        assert result.exit_code == 1
        assert "error:" in err_text(result)


class TestAnalyzeOrTest:
    def test_stdout_result(self, runner):
        result = runner.invoke(main, ["analyze", "or-test", "3", "7", "2", "8"])
        assert result.exit_code == 0
        lines = result.output.strip().splitlines()
        assert lines[0] == "odds_ratio,p_value,or_defined"
        odds, p, defined = lines[1].split(",")
        assert float(odds) == pytest.approx(24 / 14)
        assert 0.0 < float(p) <= 1.0
        assert defined == "true"

    def test_undefined_or(self, runner):
        result = runner.invoke(main, ["analyze", "or-test", "3", "0", "2", "8"])
        assert result.exit_code == 0
        assert result.output.strip().splitlines()[1].endswith("false")

    def test_file_output(self, runner, tmp_path):
        out = tmp_path / "or.csv"
        result = runner.invoke(
            main, ["analyze", "or-test", "3", "7", "2", "8", "--out", str(out)]
        )
        assert result.exit_code == 0
        assert out.read_text().startswith("odds_ratio,")

    def test_negative_count_fails(self, runner):
        result = runner.invoke(main, ["analyze", "or-test", "--", "-1", "7", "2", "8"])
        assert result.exit_code == 1
        assert "error:" in err_text(result)


class TestAnalyzeSmooth:
    def test_stdout_roundtrip(self, runner, ema_csv, tmp_path):
        result = runner.invoke(main, ["analyze", "smooth", "--in", str(ema_csv)])
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert lines[0] == ",".join(CHANNEL_NAMES)
        assert len(lines) == 65

    def test_file_output_parses_back(self, runner, ema_csv, tmp_path):
        out = tmp_path / "smoothed.ema.csv"
        result = runner.invoke(
            main,
            ["analyze", "smooth", "--in", str(ema_csv), "--out", str(out), "--no-figures"],
        )
        assert result.exit_code == 0
        traj = ema_read(out)
        assert traj.channels.shape == (13, 64)

    def test_figure_written(self, runner, ema_csv, tmp_path):
        out = tmp_path / "sm.csv"
        result = runner.invoke(
            main, ["analyze", "smooth", "--in", str(ema_csv), "--out", str(out)]
        )
        assert result.exit_code == 0
        assert (tmp_path / "sm.png").exists()


class TestAnalyzeExport2d:
    def test_writes_place_csvs_and_panel(self, runner, ema_csv, tmp_path):
        out = tmp_path / "traj2d"
        result = runner.invoke(
            main,
            ["analyze", "export-2d", "--gen", str(ema_csv), "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        for place in ("li", "ul", "ll", "tt", "tb", "td"):
            assert (out / f"trajectory_{place}.csv").exists()
        assert (out / "trajectories.png").exists()

    def test_with_real_and_scale(self, runner, ema_csv, tmp_path):
        out = tmp_path / "traj2d"
        result = runner.invoke(
            main,
            [
                "analyze", "export-2d", "--gen", str(ema_csv), "--real", str(ema_csv),
                "--real-scale", "2.0", "--out", str(out), "--no-figures", "--no-smooth",
            ],
        )
        assert result.exit_code == 0
        line = (out / "trajectory_tt.csv").read_text().splitlines()[1]
        _, gx, gy, rx, ry = line.split(",")
        assert float(rx) == pytest.approx(2.0 * float(gx))
        assert float(ry) == pytest.approx(2.0 * float(gy))
        assert not (out / "trajectories.png").exists()


class TestGradcheckCommand:
    def test_autodiff_suite_passes(self, runner):
        result = runner.invoke(
            main, ["gradcheck", "--module", "autodiff", "--trials", "8"]
        )
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert lines[-1].startswith("module=autodiff")
        assert lines[-1].endswith("pass")
        assert any("op=conv1d " in line for line in lines)

    def test_zero_trials_vacuous_pass(self, runner):
        result = runner.invoke(
            main, ["gradcheck", "--module", "gp", "--trials", "0"]
        )
        assert result.exit_code == 0

    def test_unknown_module_usage_error(self, runner):
        result = runner.invoke(main, ["gradcheck", "--module", "everything"])
        assert result.exit_code == 2


class TestTopLevel:
    def test_version(self, runner):
        result = runner.invoke(main, ["--version"])
        assert result.exit_code == 0
        assert "emagan" in result.output

    def test_help_lists_commands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for cmd in ("train", "generate", "synth", "analyze", "gradcheck"):
            assert cmd in result.output
