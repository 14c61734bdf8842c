"""Build (or reuse) the default synthetic corpus and train the VQ classifier and its no-VQ twin.

    python3 scripts/run_classifier.py --work runs/default
"""
import argparse
import logging
from pathlib import Path

from affectecho.checkpoint import save_checkpoint
from affectecho.classifier import codebook_utilization
from affectecho.config import load_config
from affectecho.corpus import build_synthetic_corpus, open_corpus
from affectecho.pipeline import clip_features, config_path, fit_classifier, history_path, write_history


def corpus_for(run, work: Path):
    root = work / "corpus"
    if (root / "index.jsonl").is_file():
        return open_corpus(root)
    c = run.corpus
    return build_synthetic_corpus(root, c.n_per_emotion, c.speakers, c.languages, run.seed, c.duration)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, default=Path("runs/default"))
    ap.add_argument("--config", default=None)
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    run = load_config(args.config, args.overrides)
    args.work.mkdir(parents=True, exist_ok=True)
    index = corpus_for(run, args.work)
    for name, vq in (("classifier", True), ("classifier_novq", False)):
        model, hist = fit_classifier(index, run, use_vq=vq)
        ckpt = args.work / f"{name}.aeck"
        save_checkpoint(model, ckpt, meta={"mode": "vq" if vq else "no-vq"})
        write_history(history_path(ckpt), hist)
        run.write(config_path(ckpt))
        print(f"{name}: train_acc={hist[-1]['train_acc']:.4f} val_acc={hist[-1]['val_acc']:.4f}")
        if vq:
            feats = clip_features(index, index.select(role="emotional"), run)
            pct, _ = codebook_utilization(model, [f.mel for f in feats], [f.entry.label for f in feats])
            print("utilisation (% per emotion over Q1..Q5):")
            for label, row in zip(("Angry", "Happy", "Neutral", "Sad", "Surprised"), pct):
                print(f"  {label:<10s}" + " ".join(f"{v:6.1f}" for v in row))


if __name__ == "__main__":
    main()
