"""Evaluation protocols, ablation harness and embedding export.

``evaluate`` writes six CSVs:

    quantitative.csv   language, emotion, n, mcd, ssim, ser, pcc
    confusion.csv      classifier confusion (%) on the test split, per language
    ser_confusion.csv  confusion (%) of converted mels vs. reference emotion
    utilization.csv    share (%) of each emotion's clips per in-block code Q1..Q5
    pcc_trend.csv      mean F0 correlation per reference code
    pairs.csv          one row per converted test clip
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import MelSpectrogram, extract_f0
from .classifier import (CODES_PER_EMOTION, DOMINANT, VQClassifier, classify, codebook_utilization,
                         cosine_scores, encode_many, predict_labels)
from .config import RunConfig
from .corpus import EMOTIONS, NEUTRAL, CorpusEntry, CorpusIndex
from .generator import Generator, convert
from .metrics import MetricError, confusion_matrix, mcd, pcc, ssim
from .pipeline import clip_features, fit_classifier, fit_generator, training_triples, write_csv, write_history
from .stats import TestError, one_tailed_t_test, wilcoxon_signed_rank

log = logging.getLogger(__name__)

MODES = ("same-speaker", "speaker-independent", "cross-language")
TARGET_EMOTIONS = tuple(e for e in EMOTIONS if e != EMOTIONS[NEUTRAL])
Q_COLS = [f"Q{i + 1}" for i in range(CODES_PER_EMOTION)]


@dataclass
class EvalPair:
    source: CorpusEntry      # neutral rendition, the conversion input
    target: CorpusEntry      # ground-truth emotional rendition
    reference: CorpusEntry   # supplies the emotion


def make_pairs(index: CorpusIndex, mode: str, seed: int = 0, split: str = "test") -> list[EvalPair]:
    """Pair every emotional test clip with its neutral twin and a reference.

    same-speaker: another utterance by the same speaker in the same emotion
    (the clip itself if there is none); speaker-independent: a different
    speaker of the same language; cross-language: any speaker of another
    language.  References come from all splits.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rng = np.random.default_rng(seed)
    pool = defaultdict(list)
    for e in index.select(role="emotional"):
        pool[e.emotion].append(e)
    pairs = []
    for t in index.select(split):
        if t.emotion not in TARGET_EMOTIONS:
            continue
        src = index.neutral_for(t)
        if src is None or src.clip_id == t.clip_id:
            continue
        if mode == "same-speaker":
            cands = [r for r in pool[t.emotion] if r.speaker == t.speaker and r.utterance_id != t.utterance_id]
            cands = cands or [t]
        elif mode == "speaker-independent":
            cands = [r for r in pool[t.emotion] if r.language == t.language and r.speaker != t.speaker]
        else:
            cands = [r for r in pool[t.emotion] if r.language != t.language]
        if not cands:
            raise ValueError(f"no {mode} reference available for {t.clip_id}")
        pairs.append(EvalPair(src, t, cands[int(rng.integers(len(cands)))]))
    if not pairs:
        raise ValueError(f"no emotional {split} clips with a neutral rendition")
    return pairs


def _crop(a: np.ndarray, b: np.ndarray):
    T = min(len(a), len(b))
    return a[:T], b[:T]


def run_pairs(index: CorpusIndex, classifier: VQClassifier, generator: Generator,
              pairs: list[EvalPair], run: RunConfig, vocode: bool | None = None) -> list[dict]:
    """Convert each pair and score it against the ground truth."""
    vocode = run.data.vocode_eval if vocode is None else vocode
    rows = []
    for k, p in enumerate(pairs):
        src, ref, tgt = index.load(p.source), index.load(p.reference), index.load(p.target)
        try:
            wav, diag = convert(generator, classifier, src, ref, run.spectrogram,
                                run.data.gl_iterations, seed=run.seed + k, vocode=vocode)
        except Exception as exc:
            raise RuntimeError(f"conversion of {p.source.clip_id} with reference "
                               f"{p.reference.clip_id} failed: {exc}") from exc
        out = diag["mel_out"].frames
        gt = clip_features(index, [p.target], run)[0].mel
        o, g = _crop(out, gt)
        pred, _ = classify(classifier, MelSpectrogram(out, run.spectrogram))
        row = {"source": p.source.clip_id, "target": p.target.clip_id, "reference": p.reference.clip_id,
               "language": p.target.language, "ref_language": p.reference.language,
               "emotion": p.target.emotion, "ref_emotion": p.reference.emotion,
               "hard_index": diag["hard_index"], "ref_label": EMOTIONS[diag["label"]],
               "pred": EMOTIONS[pred], "mcd": mcd(o, g), "ssim": ssim(o, g), "pcc": float("nan")}
        if wav is not None:
            try:
                row["pcc"] = pcc(extract_f0(wav, run.spectrogram, run.pitch),
                                 extract_f0(tgt, run.spectrogram, run.pitch))
            except MetricError:
                pass
        rows.append(row)
    return rows


def _mean(xs) -> float:
    xs = np.asarray([x for x in xs if np.isfinite(x)], dtype=float)
    return float(xs.mean()) if xs.size else float("nan")


def evaluate(index: CorpusIndex, classifier: VQClassifier, generator: Generator, run: RunConfig,
             mode: str, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = make_pairs(index, mode, run.seed)
    rows = run_pairs(index, classifier, generator, pairs, run)
    languages = index.languages()

    quant = []
    for lang in languages:
        for emo in TARGET_EMOTIONS:
            sel = [r for r in rows if r["language"] == lang and r["emotion"] == emo]
            quant.append({"language": lang, "emotion": emo, "n": len(sel),
                          "mcd": _mean(r["mcd"] for r in sel), "ssim": _mean(r["ssim"] for r in sel),
                          "ser": _mean(float(r["pred"] == r["ref_emotion"]) for r in sel),
                          "pcc": _mean(r["pcc"] for r in sel)})
    write_csv(out_dir / "quantitative.csv", ["language", "emotion", "n", "mcd", "ssim", "ser", "pcc"], quant)

    # classifier recognition on the clean test clips
    conf_rows = []
    test = clip_features(index, index.select("test"), run)
    for lang in languages:
        sel = [f for f in test if f.entry.language == lang]
        if not sel:
            continue
        pred = predict_labels(classifier, encode_many(classifier, [f.mel for f in sel]))
        pct, n = confusion_matrix([f.entry.label for f in sel], pred)
        for i, emo in enumerate(EMOTIONS):
            conf_rows.append([lang, emo, *pct[i], n[i]])
    write_csv(out_dir / "confusion.csv", ["language", "emotion", *EMOTIONS, "n"], conf_rows)

    ser_rows = []
    for lang in languages:
        sel = [r for r in rows if r["language"] == lang]
        pct, n = confusion_matrix([EMOTIONS.index(r["ref_emotion"]) for r in sel],
                                  [EMOTIONS.index(r["pred"]) for r in sel])
        for emo in TARGET_EMOTIONS:
            i = EMOTIONS.index(emo)
            ser_rows.append([lang, emo, *pct[i], n[i]])
    write_csv(out_dir / "ser_confusion.csv", ["language", "emotion", *EMOTIONS, "n"], ser_rows)

    util_rows = []
    for lang in languages:
        feats = clip_features(index, index.select(role="emotional", language=lang), run)
        pct, n = codebook_utilization(classifier, [f.mel for f in feats], [f.entry.label for f in feats])
        for i, emo in enumerate(EMOTIONS):
            util_rows.append([lang, emo, *pct[i], n[i], int(n[i] == 0)])
    write_csv(out_dir / "utilization.csv", ["language", "emotion", *Q_COLS, "n", "absent"], util_rows)

    trend = []
    for emo in TARGET_EMOTIONS:
        for code in range(len(DOMINANT)):
            sel = [r for r in rows if r["emotion"] == emo and r["hard_index"] == code]
            if sel:
                trend.append({"emotion": emo, "code_index": code, "n": len(sel),
                              "pcc": _mean(r["pcc"] for r in sel)})
    write_csv(out_dir / "pcc_trend.csv", ["emotion", "code_index", "n", "pcc"], trend)

    cols = ["source", "target", "reference", "language", "ref_language", "emotion", "ref_emotion",
            "hard_index", "ref_label", "pred", "mcd", "ssim", "pcc"]
    write_csv(out_dir / "pairs.csv", cols, rows)
    return {"pairs": rows, "quantitative": quant}


# -- ablation ------------------------------------------------------------------------
def _safe(fn, *args):
    try:
        res = fn(*args)
        return res.statistic, res.p_value, res.n, "ok"
    except TestError as exc:
        return float("nan"), float("nan"), 0, f"undefined: {exc}"


def ablate(index: CorpusIndex, run: RunConfig, out_dir, progress=None) -> dict:
    """VQ vs. plain classifier and spectral vs. plain-conv generator, over bootstrap trials.

    Each trial draws ``sample_size`` test clips (with replacement): per-emotion
    accuracy of both classifiers feeds a one-tailed paired t-test per
    emotion; mean SSIM of both generators feeds a one-sided signed-rank test.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ab = run.ablation
    if ab.trials < 1 or ab.sample_size < 1:
        raise ValueError("trials and sample_size must be >= 1")
    clf = {}
    for name, vq in (("vq", True), ("novq", False)):
        model, hist = fit_classifier(index, run, use_vq=vq, epochs=ab.classifier_epochs, progress=progress)
        write_history(out_dir / f"classifier_{name}.history.csv", hist)
        clf[name] = model
    triples = training_triples(index, run)
    gen = {}
    for name, spectral in (("spectral", True), ("regular", False)):
        model, hist = fit_generator(index, clf["vq"], run, use_spectral_conv=spectral,
                                    epochs=ab.generator_epochs, triples=triples, progress=progress)
        write_history(out_dir / f"generator_{name}.history.csv", hist)
        gen[name] = model

    test = clip_features(index, index.select("test"), run)
    if not test:
        raise ValueError("corpus has no test clips")
    labels = np.array([f.entry.label for f in test])
    correct = {k: predict_labels(m, encode_many(m, [f.mel for f in test])) == labels for k, m in clf.items()}
    pairs = make_pairs(index, "same-speaker", run.seed)
    ssims = {k: np.array([r["ssim"] for r in run_pairs(index, clf["vq"], m, pairs, run, vocode=False)])
             for k, m in gen.items()}

    rng = np.random.default_rng(run.seed)
    trials = []
    for t in range(ab.trials):
        ci = rng.integers(0, len(test), ab.sample_size)
        gi = rng.integers(0, len(pairs), ab.sample_size)
        row = {"trial": t + 1}
        for emo_i, emo in enumerate(EMOTIONS):
            m = ci[labels[ci] == emo_i]
            for k in clf:
                row[f"acc_{k}_{emo}"] = float(correct[k][m].mean()) if m.size else float("nan")
        for k in gen:
            row[f"ssim_{k}"] = float(ssims[k][gi].mean())
        trials.append(row)
    cols = ["trial"] + [f"acc_{k}_{e}" for k in clf for e in EMOTIONS] + [f"ssim_{k}" for k in gen]
    write_csv(out_dir / "ablation_trials.csv", cols, trials)

    tt = []
    for emo in EMOTIONS:
        a = np.array([r[f"acc_vq_{emo}"] for r in trials])
        b = np.array([r[f"acc_novq_{emo}"] for r in trials])
        ok = np.isfinite(a) & np.isfinite(b)
        if ok.sum() < 2:
            tt.append({"emotion": emo, "t": float("nan"), "p_value": float("nan"), "n_trials": int(ok.sum()),
                       "status": "undefined: fewer than 2 trials with this emotion"})
            continue
        t_stat, p, n, status = _safe(one_tailed_t_test, a[ok], b[ok])
        tt.append({"emotion": emo, "t": t_stat, "p_value": p, "n_trials": int(ok.sum()), "status": status})
    write_csv(out_dir / "ablation_ttest.csv", ["emotion", "t", "p_value", "n_trials", "status"], tt)

    a = np.array([r["ssim_spectral"] for r in trials])
    b = np.array([r["ssim_regular"] for r in trials])
    v, p, n, status = _safe(wilcoxon_signed_rank, a, b)
    wil = [{"comparison": "spectral>regular", "v": v, "p_value": p, "n": n, "trials": len(trials),
            "status": status}]
    write_csv(out_dir / "ablation_wilcoxon.csv", ["comparison", "v", "p_value", "n", "trials", "status"], wil)
    return {"ttest": tt, "wilcoxon": wil[0], "trials": trials}


# -- embeddings ------------------------------------------------------------------------
def pca3(z: np.ndarray) -> np.ndarray:
    """Projection on the top three principal axes; each axis signed so its largest loading is positive."""
    zc = z - z.mean(axis=0)
    _, _, vt = np.linalg.svd(zc, full_matrices=False)
    vt = vt[:3]
    sign = np.sign(vt[np.arange(len(vt)), np.argmax(np.abs(vt), axis=1)])
    proj = zc @ (vt * sign[:, None]).T
    if proj.shape[1] < 3:
        proj = np.pad(proj, ((0, 0), (0, 3 - proj.shape[1])))
    return proj


def export_embeddings(index: CorpusIndex, classifier: VQClassifier, run: RunConfig, out_csv) -> dict:
    out_csv = Path(out_csv)
    feats = clip_features(index, index.select(role="emotional"), run)
    if not feats:
        raise ValueError("corpus has no emotional clips")
    z = encode_many(classifier, [f.mel for f in feats]).astype(np.float64)
    if classifier.cfg.use_vq:
        hard = np.argmax(cosine_scores(classifier.codebook.data, z), axis=1)
    else:
        hard = np.full(len(z), -1)
    pred = predict_labels(classifier, z)
    proj = pca3(z)
    cols = (["clip_id", "speaker", "language", "emotion", "label", "pred", "hard_index"]
            + [f"z_{i}" for i in range(z.shape[1])] + ["pca_0", "pca_1", "pca_2"])
    rows = []
    for f, zi, h, pr, pj in zip(feats, z, hard, pred, proj):
        rows.append([f.entry.clip_id, f.entry.speaker, f.entry.language, f.entry.emotion,
                     f.entry.label, int(pr), int(h), *zi, *pj])
    write_csv(out_csv, cols, rows)
    summary = {}
    if classifier.cfg.use_vq:
        pct, n = codebook_utilization(classifier, [f.mel for f in feats], [f.entry.label for f in feats])
        util = out_csv.with_name(out_csv.stem + ".utilization.csv")
        write_csv(util, ["emotion", *Q_COLS, "n", "absent"],
                  [[e, *pct[i], n[i], int(n[i] == 0)] for i, e in enumerate(EMOTIONS)])
        summary["utilization"] = pct
    return summary
