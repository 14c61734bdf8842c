"""Train the toy generator (spectral and plain-conv variants) against a saved classifier.

    python3 scripts/run_generator.py --work runs/default
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from affectecho.checkpoint import load_checkpoint, save_checkpoint
from affectecho.config import load_config
from affectecho.corpus import open_corpus
from affectecho.generator import convert
from affectecho.metrics import ssim
from affectecho.pipeline import config_path, fit_generator, history_path, training_triples, write_history


def identity_ssim(index, clf, gen, run) -> float:
    vals = []
    for e in index.select("test", role="emotional"):
        clip = index.load(e)
        _, diag = convert(gen, clf, clip, clip, run.spectrogram, vocode=False)
        vals.append(ssim(diag["mel_out"].frames, diag["mel_in"].frames))
    return float(np.mean(vals))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, default=Path("runs/default"))
    ap.add_argument("--config", default=None)
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    ap.add_argument("--only-spectral", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    run = load_config(args.config, args.overrides)
    index = open_corpus(args.work / "corpus")
    clf = load_checkpoint(args.work / "classifier.aeck")
    triples = training_triples(index, run)
    variants = (("generator", True),) if args.only_spectral else (("generator", True), ("generator_regular", False))
    for name, spectral in variants:
        gen, hist = fit_generator(index, clf, run, use_spectral_conv=spectral, triples=triples)
        ckpt = args.work / f"{name}.aeck"
        save_checkpoint(gen, ckpt, meta={"mode": "spectral" if spectral else "regular"})
        write_history(history_path(ckpt), hist)
        run.write(config_path(ckpt))
        total = np.array([r["total"] for r in hist])
        ratio = total[-5:].mean() / total[0]
        print(f"{name}: loss ratio (last-5 mean / epoch 1) {ratio:.3f}, "
              f"identity SSIM {identity_ssim(index, clf, gen, run):.3f}")


if __name__ == "__main__":
    main()
