"""Command-line entry point.

One executable, five commands: train, generate, synth, analyze (with four
subcommands), and gradcheck. Every command is deterministic under a fixed
--seed, exits 0 on success, and reports failures as a single
machine-parseable line (``error: ...``) on stderr with a nonzero exit code.
Report-producing paths render matplotlib figures next to their CSV output
unless --no-figures is passed.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import analysis as ana
from . import dataio
from . import gradcheck as gc
from . import training
from .autodiff import ContractViolation, Tensor, no_grad
from .models import EmaTrajectory, GEN_SEQ_LEN, generator_forward, sample_latent
from .physics import Waveform, make_physical, physical_forward

PHYS_CHOICES = {"source-filter": "source_filter", "frozen-random": "frozen_random"}

_ERRORS = (
    ContractViolation,
    dataio.DataFormatError,
    training.TrainingDiverged,
    OSError,
)


def _fail(exc) -> None:
    message = " ".join(str(exc).split())
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


@click.group()
@click.version_option(__version__, prog_name="emagan")
def main() -> None:
    """Articulatory waveform GAN: training, synthesis, and analysis tools."""


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(), help="Directory of training .wav files.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory for metrics and checkpoints.")
@click.option("--steps", default=2000, show_default=True, help="Training cycles to run.")
@click.option("--batch", default=8, show_default=True, help="Batch size.")
@click.option("--n-critic", default=5, show_default=True, help="Critic updates per cycle.")
@click.option("--gp-lambda", default=10.0, show_default=True, help="Gradient penalty weight.")
@click.option("--lr", default=1e-4, show_default=True, help="Adam learning rate.")
@click.option("--beta1", default=0.5, show_default=True, help="Adam beta1.")
@click.option("--beta2", default=0.9, show_default=True, help="Adam beta2.")
@click.option("--seed", default=0, show_default=True, help="Master seed.")
@click.option("--phys", default="source-filter", show_default=True, type=click.Choice(sorted(PHYS_CHOICES)), help="Waveform model kind.")
@click.option("--phys-seed", default=0, show_default=True, help="Waveform model seed.")
@click.option("--shuffle-n", default=2, show_default=True, help="Critic phase shuffle extent (0 disables).")
@click.option("--checkpoint-every", default=500, show_default=True, help="Checkpoint interval in cycles (0: final only).")
@click.option("--no-figures", is_flag=True, help="Skip figure rendering.")
@click.option("--quiet", is_flag=True, help="Suppress per-step progress lines.")
def train(data_dir, out_dir, steps, batch, n_critic, gp_lambda, lr, beta1, beta2,
          seed, phys, phys_seed, shuffle_n, checkpoint_every, no_figures, quiet):
    """Train the adversarial model on a directory of fixed-rate audio."""
    try:
        dataset = dataio.dataset_load(data_dir)
        config = training.TrainConfig(
            batch_size=batch,
            n_critic=n_critic,
            gp_lambda=gp_lambda,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            total_steps=steps,
            checkpoint_every=checkpoint_every,
            seed=seed,
            physical_kind=PHYS_CHOICES[phys],
            physical_seed=phys_seed,
            shuffle_n=shuffle_n,
        )

        def progress(row):
            if not quiet:
                click.echo(
                    f"step={row['step']} critic={row['critic_loss']:.6f} "
                    f"gen={row['gen_loss']:.6f} gp={row['gp']:.6f} "
                    f"gap={row['wasserstein_gap']:.6f}"
                )

        training.train(dataset, config, out_dir, progress=progress)
        metrics_path = Path(out_dir) / "metrics.csv"
        if not no_figures:
            from . import figures

            fig = figures.loss_curves(metrics_path, Path(out_dir) / "metrics.png")
            click.echo(f"figure: {fig}")
        click.echo(f"done steps={steps} metrics={metrics_path}")
    except _ERRORS as exc:
        _fail(exc)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def _physical_from_checkpoint(groups, config):
    kind = config.get("physical_kind", "source_filter")
    phys_seed = int(config.get("physical_seed", 0))
    model = make_physical(kind, phys_seed)
    stored = groups.get("physical")
    if stored is not None and len(stored) > 0 and hasattr(model, "replace_params"):
        model.replace_params(stored)
    return model


@main.command()
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(), help="Checkpoint file to sample from.")
@click.option("--num", default=1, show_default=True, help="Number of trajectory/audio pairs.")
@click.option("--seed", default=0, show_default=True, help="Latent sampling seed.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
def generate(ckpt_path, num, seed, out_dir):
    """Sample trajectories from a trained model and synthesize their audio."""
    try:
        if num < 0:
            raise ContractViolation(f"--num must be >= 0, got {num}")
        groups, _, config, _ = dataio.checkpoint_load(ckpt_path)
        if "generator" not in groups:
            raise dataio.DataFormatError(
                f"{ckpt_path}: checkpoint has no generator parameters"
            )
        gen_params = groups["generator"]
        physical = _physical_from_checkpoint(groups, config)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(seed)
        for i in range(num):
            with no_grad():
                z = sample_latent(rng, 1)
                ema = generator_forward(gen_params, z)
                audio = physical_forward(physical, ema)
            traj = EmaTrajectory(ema.data[0])
            dataio.ema_write(out / f"{i:03d}.ema.csv", traj)
            dataio.wav_write(out / f"{i:03d}.wav", Waveform(audio.data[0, 0]))
            click.echo(f"wrote {out / f'{i:03d}.ema.csv'} {out / f'{i:03d}.wav'}")
        click.echo(f"done num={num} out={out}")
    except _ERRORS as exc:
        _fail(exc)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


@main.command()
@click.option("--ema", "ema_path", required=True, type=click.Path(), help="Input trajectory CSV.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output WAV path.")
@click.option("--phys", default="source-filter", show_default=True, type=click.Choice(sorted(PHYS_CHOICES)), help="Waveform model kind.")
@click.option("--seed", default=0, show_default=True, help="Waveform model seed.")
@click.option("--checkpoint", "ckpt_path", default=None, type=click.Path(), help="Optional checkpoint to import frozen waveform-model weights from.")
def synth(ema_path, out_path, phys, seed, ckpt_path):
    """Render a trajectory CSV to audio through the frozen waveform model."""
    try:
        traj = dataio.ema_read(ema_path)
        model = make_physical(PHYS_CHOICES[phys], seed)
        if ckpt_path is not None:
            groups, _, _, _ = dataio.checkpoint_load(ckpt_path)
            stored = groups.get("physical")
            if stored is None or len(stored) == 0 or not hasattr(model, "replace_params"):
                raise dataio.DataFormatError(
                    f"{ckpt_path}: no importable waveform-model parameters "
                    f"for kind {PHYS_CHOICES[phys]!r}"
                )
            model.replace_params(stored)
        with no_grad():
            audio = physical_forward(model, Tensor(traj.channels[None, :, :]))
        dataio.wav_write(out_path, Waveform(audio.data[0, 0]))
        click.echo(f"wrote {out_path} samples={audio.data.shape[-1]}")
    except _ERRORS as exc:
        _fail(exc)


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


@main.group()
def analyze() -> None:
    """Trajectory comparison reports."""


def _emit_csv(text: str, out_path, figure_cb=None, no_figures=True) -> None:
    if out_path is None:
        click.echo(text, nl=False)
        return
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(text, encoding="utf-8")
    click.echo(f"wrote {out_path}")
    if figure_cb is not None and not no_figures:
        fig_path = figure_cb(out_path)
        click.echo(f"figure: {fig_path}")


@analyze.command("dtw-corr")
@click.option("--gen", "gen_path", required=True, type=click.Path(), help="Generated trajectory CSV.")
@click.option("--real", "real_path", required=True, type=click.Path(), help="Reference trajectory CSV.")
@click.option("--span", default=ana.DEFAULT_SPAN, show_default=True, help="Smoothing span applied to both trajectories.")
@click.option("--degree", default=1, show_default=True, help="Local polynomial degree.")
@click.option("--no-smooth", is_flag=True, help="Skip smoothing before alignment.")
@click.option("--normalize", is_flag=True, help="Z-score both series before alignment.")
@click.option("--out", "out_path", default=None, type=click.Path(), help="Report CSV path (default: stdout).")
@click.option("--no-figures", is_flag=True, help="Skip figure rendering.")
def dtw_corr(gen_path, real_path, span, degree, no_smooth, normalize, out_path, no_figures):
    """Warp generated channels onto real ones and report correlations."""
    try:
        gen = dataio.ema_read(gen_path)
        real = dataio.ema_read(real_path)
        report = ana.dtw_corr_pipeline(
            gen, real,
            span=None if no_smooth else span,
            degree=degree,
            normalize=normalize,
        )

        def render(csv_path):
            from . import figures

            return figures.correlation_bars(report, csv_path.with_suffix(".png"))

        _emit_csv(report.to_csv(), out_path, render, no_figures)
    except _ERRORS as exc:
        _fail(exc)


@analyze.command("or-test")
@click.argument("a", type=int)
@click.argument("b", type=int)
@click.argument("c", type=int)
@click.argument("d", type=int)
@click.option("--out", "out_path", default=None, type=click.Path(), help="Result CSV path (default: stdout).")
def or_test(a, b, c, d, out_path):
    """Odds ratio and exact two-sided p for the 2x2 table A B / C D."""
    try:
        result = ana.odds_ratio_test(a, b, c, d)
        text = (
            "odds_ratio,p_value,or_defined\n"
            f"{repr(result.odds_ratio)},{repr(result.p_value)},"
            f"{str(result.or_defined).lower()}\n"
        )
        _emit_csv(text, out_path)
    except _ERRORS as exc:
        _fail(exc)


@analyze.command("smooth")
@click.option("--in", "in_path", required=True, type=click.Path(), help="Input trajectory CSV.")
@click.option("--span", default=ana.DEFAULT_SPAN, show_default=True, help="Smoothing span.")
@click.option("--degree", default=1, show_default=True, help="Local polynomial degree.")
@click.option("--out", "out_path", default=None, type=click.Path(), help="Smoothed CSV path (default: stdout).")
@click.option("--no-figures", is_flag=True, help="Skip figure rendering.")
def smooth(in_path, span, degree, out_path, no_figures):
    """Smooth every channel of a trajectory CSV."""
    try:
        traj = dataio.ema_read(in_path)
        smoothed = np.stack(
            [ana.loess_smooth(ch, span, degree) for ch in traj.channels]
        )
        from .models import CHANNEL_NAMES

        lines = [",".join(CHANNEL_NAMES)]
        for row in smoothed.T:
            lines.append(",".join(repr(v) for v in row.tolist()))
        text = "\n".join(lines) + "\n"

        def render(csv_path):
            from . import figures

            return figures.smoothing_overlay(
                traj.channels, smoothed, csv_path.with_suffix(".png")
            )

        _emit_csv(text, out_path, render, no_figures)
    except _ERRORS as exc:
        _fail(exc)


@analyze.command("export-2d")
@click.option("--gen", "gen_path", required=True, type=click.Path(), help="Generated trajectory CSV.")
@click.option("--real", "real_path", default=None, type=click.Path(), help="Optional reference trajectory CSV.")
@click.option("--real-scale", default=ana.DEFAULT_REAL_SCALE, show_default=True, help="Multiplier applied to real coordinates.")
@click.option("--span", default=ana.DEFAULT_SPAN, show_default=True, help="Smoothing span for generated channels.")
@click.option("--degree", default=1, show_default=True, help="Local polynomial degree.")
@click.option("--no-smooth", is_flag=True, help="Skip smoothing.")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory for per-articulator CSVs.")
@click.option("--no-figures", is_flag=True, help="Skip figure rendering.")
def export_2d(gen_path, real_path, real_scale, span, degree, no_smooth, out_dir, no_figures):
    """Write per-articulator 2D trajectory CSVs (and a panel figure)."""
    try:
        gen = dataio.ema_read(gen_path)
        real = dataio.ema_read(real_path) if real_path else None
        eff_span = None if no_smooth else span
        paths = ana.trajectory_export(
            gen, out_dir, real=real, real_scale=real_scale, span=eff_span,
            degree=degree,
        )
        for place in sorted(paths):
            click.echo(f"wrote {paths[place]}")
        if not no_figures:
            from . import figures

            rows = ana.trajectory_rows(
                gen, real, real_scale=real_scale, span=eff_span, degree=degree
            )
            fig = figures.trajectory_panels(
                rows, Path(out_dir) / "trajectories.png"
            )
            click.echo(f"figure: {fig}")
    except _ERRORS as exc:
        _fail(exc)


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------


@main.command("gradcheck")
@click.option("--module", "module_name", required=True, type=click.Choice(gc.SUITES), help="Suite to run.")
@click.option("--trials", default=100, show_default=True, help="Seeded random instances (0: vacuous pass).")
@click.option("--seed", default=0, show_default=True, help="Suite seed.")
def gradcheck_cmd(module_name, trials, seed):
    """Verify gradients against central finite differences."""
    try:
        result = gc.run_suite(module_name, trials, seed)
        for line in result.op_lines():
            click.echo(line)
        click.echo(result.line())
        if not result.passed:
            sys.exit(1)
    except _ERRORS as exc:
        _fail(exc)


if __name__ == "__main__":
    main()
