"""Evaluate saved checkpoints under all three pairing protocols.

    python3 scripts/run_evaluate.py --work runs/default
"""
import argparse
import logging
from pathlib import Path

from affectecho.checkpoint import load_checkpoint
from affectecho.config import load_config
from affectecho.corpus import open_corpus
from affectecho.report import MODES, evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, default=Path("runs/default"))
    ap.add_argument("--config", default=None)
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    ap.add_argument("--mode", choices=MODES, action="append")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    run = load_config(args.config, args.overrides)
    index = open_corpus(args.work / "corpus")
    clf = load_checkpoint(args.work / "classifier.aeck")
    gen = load_checkpoint(args.work / "generator.aeck")
    for mode in args.mode or MODES:
        out = args.work / f"eval_{mode}"
        res = evaluate(index, clf, gen, run, mode, out)
        run.write(out / "config.json")
        print(f"{mode}: {len(res['pairs'])} conversions")
        print(f"  {'lang':<5s}{'emotion':<11s}{'mcd':>8s}{'ssim':>8s}{'ser':>8s}{'pcc':>8s}")
        for r in res["quantitative"]:
            print(f"  {r['language']:<5s}{r['emotion']:<11s}{r['mcd']:8.3f}{r['ssim']:8.3f}"
                  f"{r['ser']:8.3f}{r['pcc']:8.3f}")


if __name__ == "__main__":
    main()
