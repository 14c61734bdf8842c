"""Corpus -> features -> trained models, shared by the CLI and scripts."""
from __future__ import annotations

import csv
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .audio import extract_f0, mel_spectrogram
from .classifier import VQClassifier, train_classifier
from .config import RunConfig
from .corpus import CorpusEntry, CorpusIndex
from .features import ClipFeatures, f0_statistics
from .generator import Generator, TrainingTriple, train_generator

log = logging.getLogger(__name__)


def clip_features(index: CorpusIndex, entries: list[CorpusEntry], run: RunConfig,
                  with_f0: bool = False) -> list[ClipFeatures]:
    out = []
    for e in entries:
        clip = index.load(e)
        mel = mel_spectrogram(clip, run.spectrogram).frames
        f0 = extract_f0(clip, run.spectrogram, run.pitch) if with_f0 else None
        out.append(ClipFeatures(e, mel, f0))
    return out


def fit_classifier(index: CorpusIndex, run: RunConfig, use_vq: bool | None = None,
                   epochs: int | None = None, progress=None) -> tuple[VQClassifier, list[dict]]:
    cfg = run.classifier if use_vq is None else replace(run.classifier, use_vq=use_vq)
    train = clip_features(index, index.select("train"), run)
    val = clip_features(index, index.select("val"), run)
    if not train:
        raise ValueError("corpus has no training clips")
    model = VQClassifier(cfg)
    hist = train_classifier(model, [f.mel for f in train], [f.entry.label for f in train],
                            [f.mel for f in val], [f.entry.label for f in val],
                            epochs=epochs, progress=progress)
    return model, hist


def training_triples(index: CorpusIndex, run: RunConfig) -> list[TrainingTriple]:
    """Neutral -> emotional pairs plus identity triples from the train split.

    Clips are drawn in a seeded order; the first ``n_pairs`` with a neutral
    twin give neutral-input triples and the first ``n_identity`` of those
    also appear as emotional-input identity triples (target = input).
    A count <= 0 means every available clip.
    """
    rng = np.random.default_rng(run.seed)
    cands = [e for e in index.select("train") if index.neutral_for(e) is not None
             and index.neutral_for(e).clip_id != e.clip_id]
    if not cands:
        raise ValueError("no training clips with a neutral rendition")
    cands = [cands[i] for i in rng.permutation(len(cands))]
    n_pairs = run.data.n_pairs if run.data.n_pairs > 0 else len(cands)
    chosen = cands[:n_pairs]
    n_id = run.data.n_identity if run.data.n_identity >= 0 else len(chosen)
    out = []
    emo = {}
    for e in chosen:
        nclip = index.load(index.neutral_for(e))
        eclip = index.load(e)
        tgt = mel_spectrogram(eclip, run.spectrogram).frames
        src = mel_spectrogram(nclip, run.spectrogram).frames
        out.append(TrainingTriple(e.clip_id, src, tgt, f0_statistics(extract_f0(nclip, run.spectrogram, run.pitch))))
        emo[e.clip_id] = (tgt, eclip)
    for e in chosen[:n_id]:
        tgt, eclip = emo[e.clip_id]
        out.append(TrainingTriple(f"{e.clip_id}:identity", tgt, tgt,
                                  f0_statistics(extract_f0(eclip, run.spectrogram, run.pitch))))
    return out


def fit_generator(index: CorpusIndex, classifier: VQClassifier, run: RunConfig,
                  use_spectral_conv: bool | None = None, epochs: int | None = None,
                  batch_size: int | None = None, triples: list[TrainingTriple] | None = None,
                  progress=None) -> tuple[Generator, list[dict]]:
    cfg = run.generator if use_spectral_conv is None else replace(run.generator, use_spectral_conv=use_spectral_conv)
    triples = triples if triples is not None else training_triples(index, run)
    model = Generator(cfg)
    hist = train_generator(model, classifier, triples, epochs=epochs, batch_size=batch_size, progress=progress)
    return model, hist


# -- output helpers --------------------------------------------------------------------
def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if not np.isfinite(x) else f"{float(x):.6f}"
    return str(x)


def write_csv(path, columns: list[str], rows: list) -> Path:
    """Rows are dicts or sequences; floats get 6 decimals so reruns diff clean."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            vals = [r.get(c, "") for c in columns] if isinstance(r, dict) else list(r)
            w.writerow([fmt(v) for v in vals])
    return path


def history_path(ckpt) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.stem + ".history.csv")


def config_path(ckpt) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.stem + ".config.json")


def write_history(path, history: list[dict]) -> Path:
    cols = list(history[0]) if history else ["epoch"]
    return write_csv(path, cols, history)
