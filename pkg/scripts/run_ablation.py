"""Ablation harness: VQ vs. plain classifier, spectral vs. plain-conv generator, paired over trials.

    python3 scripts/run_ablation.py --work runs/default --trials 50
"""
import argparse
import logging
from dataclasses import replace
from pathlib import Path

from affectecho.config import load_config
from affectecho.corpus import build_synthetic_corpus, open_corpus
from affectecho.report import ablate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, default=Path("runs/default"))
    ap.add_argument("--config", default=None)
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    ap.add_argument("--trials", type=int, default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    run = load_config(args.config, args.overrides)
    if args.trials is not None:
        run.ablation = replace(run.ablation, trials=args.trials)
    root = args.work / "corpus"
    if (root / "index.jsonl").is_file():
        index = open_corpus(root)
    else:
        c = run.corpus
        index = build_synthetic_corpus(root, c.n_per_emotion, c.speakers, c.languages, run.seed, c.duration)
    out = args.work / "ablation"
    res = ablate(index, run, out)
    run.write(out / "config.json")
    print("paired t-test, VQ > no-VQ accuracy:")
    for r in res["ttest"]:
        print(f"  {r['emotion']:<10s} t={r['t']:.3f} p={r['p_value']:.4g} ({r['status']})")
    w = res["wilcoxon"]
    print(f"signed-rank, spectral > regular SSIM over {w['trials']} trials: V={w['v']} p={w['p_value']:.4g}")


if __name__ == "__main__":
    main()
