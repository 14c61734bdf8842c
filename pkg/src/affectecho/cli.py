"""Command line entry point: ``affectecho <command>``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .audio import MelSpectrogram, load_wav, save_wav
from .checkpoint import inspect_checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .corpus import build_synthetic_corpus, open_corpus
from .generator import Generator, convert
from .classifier import VQClassifier
from .pipeline import config_path, fit_classifier, fit_generator, history_path, write_csv, write_history
from .report import MODES, ablate, evaluate, export_embeddings

log = logging.getLogger("affectecho")


def runtime_errors(fn):
    """Turn anything but a usage error into exit status 1 with a one-line message."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:  # noqa: BLE001 - reported to the user, exit 1
            log.debug("command failed", exc_info=True)
            raise click.ClickException(f"{type(exc).__name__}: {exc}") from exc
    return wrapper


def config_options(fn):
    fn = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                      help="Override a config entry, e.g. --set generator.width=64.")(fn)
    fn = click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False),
                      help="JSON run config; unknown keys are rejected.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Seed for every random choice.")(fn)
    return fn


def resolve_config(config_file, overrides, seed) -> RunConfig:
    try:
        run = load_config(config_file, overrides)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc
    if seed is not None:
        run.seed = seed
        run.classifier = replace(run.classifier, seed=seed)
        run.generator = replace(run.generator, seed=seed)
    return run


def _open(corpus) -> object:
    path = Path(corpus)
    if not (path / "index.jsonl").is_file():
        raise FileNotFoundError(f"no corpus index at {path / 'index.jsonl'}")
    return open_corpus(path)


def _load(path, kind):
    model = load_checkpoint(path)
    expected = VQClassifier if kind == "classifier" else Generator
    if not isinstance(model, expected):
        raise ValueError(f"{path} holds a {type(model).__name__}, expected a {kind} checkpoint")
    return model


def _progress(row):
    click.echo(json.dumps({k: (round(v, 6) if isinstance(v, float) else v) for k, v in row.items()}), err=True)


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def cli(verbose):
    """Emotion transfer between speech clips through a quantised emotion codebook."""
    level = logging.WARNING - 10 * verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--n", "n", type=click.IntRange(min=1), default=100, show_default=True, help="Clips per emotion, speaker and language.")
@click.option("--speakers", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--languages", type=click.IntRange(1, 2), default=2, show_default=True)
@click.option("--duration", type=click.FloatRange(min=0.1), default=1.0, show_default=True)
@config_options
@runtime_errors
def synth(out, n, speakers, languages, duration, config_file, overrides, seed):
    """Write a synthetic emotional corpus with parallel neutral renditions."""
    run = resolve_config(config_file, overrides, seed)
    run.corpus = replace(run.corpus, n_per_emotion=n, speakers=speakers, languages=languages, duration=duration)
    idx = build_synthetic_corpus(out, n, speakers, languages, run.seed, duration)
    run.write(Path(out) / "config.json")
    click.echo(f"wrote {len(idx)} clips to {out}")


@cli.command("train-classifier")
@click.option("--corpus", type=click.Path(), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--epochs", type=click.IntRange(min=1), default=None)
@click.option("--no-vq", is_flag=True, help="Plain 5-way head instead of the codebook.")
@config_options
@runtime_errors
def train_classifier_cmd(corpus, out, epochs, no_vq, config_file, overrides, seed):
    """Train the emotion classifier; writes a checkpoint and <stem>.history.csv."""
    run = resolve_config(config_file, overrides, seed)
    if epochs is not None:
        run.classifier = replace(run.classifier, epochs=epochs)
    if no_vq:
        run.classifier = replace(run.classifier, use_vq=False)
    index = _open(corpus)
    model, hist = fit_classifier(index, run, progress=_progress)
    save_checkpoint(model, out, meta={"mode": "vq" if run.classifier.use_vq else "no-vq"})
    write_history(history_path(out), hist)
    run.write(config_path(out))
    last = hist[-1]
    click.echo(f"train_acc={last['train_acc']:.4f} val_acc={last['val_acc']:.4f} -> {out}")


@cli.command("train-generator")
@click.option("--corpus", type=click.Path(), required=True)
@click.option("--classifier", "classifier_path", type=click.Path(), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--epochs", type=click.IntRange(min=1), default=None)
@click.option("--batch", type=click.IntRange(min=1), default=None)
@click.option("--no-spectral-conv", is_flag=True, help="Plain convolution instead of the Fourier layer.")
@config_options
@runtime_errors
def train_generator_cmd(corpus, classifier_path, out, epochs, batch, no_spectral_conv, config_file, overrides, seed):
    """Train the generator against a frozen classifier checkpoint."""
    run = resolve_config(config_file, overrides, seed)
    if epochs is not None:
        run.generator = replace(run.generator, epochs=epochs)
    if batch is not None:
        run.generator = replace(run.generator, batch_size=batch)
    if no_spectral_conv:
        run.generator = replace(run.generator, use_spectral_conv=False)
    index = _open(corpus)
    clf = _load(classifier_path, "classifier")
    model, hist = fit_generator(index, clf, run, progress=_progress)
    save_checkpoint(model, out, meta={"mode": "spectral" if run.generator.use_spectral_conv else "regular"})
    write_history(history_path(out), hist)
    run.write(config_path(out))
    click.echo(f"total={hist[-1]['total']:.4f} train_ssim={hist[-1]['train_ssim']:.4f} -> {out}")


@cli.command("convert")
@click.option("--input", "input_path", type=click.Path(), required=True)
@click.option("--reference", type=click.Path(), required=True)
@click.option("--classifier", "classifier_path", type=click.Path(), required=True)
@click.option("--generator", "generator_path", type=click.Path(), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--emit-mel", type=click.Path(dir_okay=False), default=None, help="Also write the generated mel (T rows x 80).")
@config_options
@runtime_errors
def convert_cmd(input_path, reference, classifier_path, generator_path, out, emit_mel, config_file, overrides, seed):
    """Give the input clip the emotion of the reference clip."""
    run = resolve_config(config_file, overrides, seed)
    clf = _load(classifier_path, "classifier")
    gen = _load(generator_path, "generator")
    wav, diag = convert(gen, clf, load_wav(input_path), load_wav(reference), run.spectrogram,
                        run.data.gl_iterations, seed=run.seed)
    save_wav(wav, out)
    mel: MelSpectrogram = diag["mel_out"]
    if emit_mel:
        write_csv(emit_mel, [f"mel_{i}" for i in range(mel.frames.shape[1])], mel.frames)
    info = {"input": str(input_path), "reference": str(reference), "hard_index": diag["hard_index"],
            "label": diag["label"], "emotion": diag["emotion"], "frames": mel.T, "config": run.to_dict()}
    Path(out).with_suffix(".json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    click.echo(f"reference code {diag['hard_index']} ({diag['emotion']}) -> {out}")


@cli.command("evaluate")
@click.option("--corpus", type=click.Path(), required=True)
@click.option("--classifier", "classifier_path", type=click.Path(), required=True)
@click.option("--generator", "generator_path", type=click.Path(), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--mode", type=click.Choice(MODES), default="same-speaker", show_default=True)
@config_options
@runtime_errors
def evaluate_cmd(corpus, classifier_path, generator_path, out, mode, config_file, overrides, seed):
    """Convert the test split and write the six report CSVs."""
    run = resolve_config(config_file, overrides, seed)
    index = _open(corpus)
    res = evaluate(index, _load(classifier_path, "classifier"), _load(generator_path, "generator"), run, mode, out)
    run.write(Path(out) / "config.json")
    click.echo(f"{len(res['pairs'])} conversions scored -> {out}")


@cli.command("ablate")
@click.option("--corpus", type=click.Path(), required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--trials", type=click.IntRange(min=1), default=None, help="Bootstrap trials (default from config: 50).")
@config_options
@runtime_errors
def ablate_cmd(corpus, out, trials, config_file, overrides, seed):
    """Train paired ablation variants and test VQ and spectral-conv gains."""
    run = resolve_config(config_file, overrides, seed)
    if trials is not None:
        run.ablation = replace(run.ablation, trials=trials)
    index = _open(corpus)
    res = ablate(index, run, out, progress=_progress)
    run.write(Path(out) / "config.json")
    w = res["wilcoxon"]
    click.echo(f"{len(res['trials'])} trials; signed-rank V={w['v']} p={w['p_value']} -> {out}")


@cli.command("embed")
@click.option("--corpus", type=click.Path(), required=True)
@click.option("--classifier", "classifier_path", type=click.Path(), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@config_options
@runtime_errors
def embed_cmd(corpus, classifier_path, out, config_file, overrides, seed):
    """Export per-clip embeddings, hard codes and a 3-d PCA projection."""
    run = resolve_config(config_file, overrides, seed)
    export_embeddings(_open(corpus), _load(classifier_path, "classifier"), run, out)
    run.write(config_path(out))
    click.echo(f"embeddings -> {out}")


@cli.command("inspect")
@click.argument("checkpoint", type=click.Path())
@runtime_errors
def inspect_cmd(checkpoint):
    """Print a checkpoint header without building the model."""
    h = inspect_checkpoint(checkpoint)
    h["n_parameters"] = int(sum(np.prod(t["shape"]) for t in h["tensors"]))
    h["tensors"] = [f"{t['name']} {tuple(t['shape'])}" for t in h["tensors"]]
    click.echo(json.dumps(h, indent=2, sort_keys=True))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="affectecho", standalone_mode=False)
    except click.exceptions.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.exceptions.Exit as exc:
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
