"""Model-facing features: normalised log-mels and F0 summary statistics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import F0Contour, MelSpectrogram, SpectrogramConfig, extract_f0, mel_spectrogram
from .corpus import CorpusEntry, CorpusIndex

N_STYLE_STATS = 6


@dataclass
class MelNormalizer:
    """Corpus-level affine map of log-mel values to zero mean, unit variance."""

    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, mels: list[np.ndarray]) -> "MelNormalizer":
        allv = np.concatenate([m.reshape(-1) for m in mels])
        return cls(float(allv.mean()), float(max(allv.std(), 1e-8)))

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.mean) / self.std

    def inverse(self, frames: np.ndarray) -> np.ndarray:
        return frames * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}


def f0_statistics(contour: F0Contour) -> np.ndarray:
    """Six scaled summary numbers of an F0 track.

    log2(mean/150), std/100, voiced ratio, mean |delta|/20, std delta/20,
    (max-min)/100, all over voiced frames; zeros when nothing is voiced.
    """
    v = contour.f0[contour.voiced]
    out = np.zeros(N_STYLE_STATS)
    out[2] = contour.voiced.mean() if len(contour) else 0.0
    if v.size == 0:
        return out
    out[0] = np.log2(v.mean() / 150.0)
    out[1] = v.std() / 100.0
    both = contour.voiced[1:] & contour.voiced[:-1]
    d = np.diff(contour.f0)[both]
    if d.size:
        out[3] = np.abs(d).mean() / 20.0
        out[4] = d.std() / 20.0
    out[5] = (v.max() - v.min()) / 100.0
    return out


@dataclass
class ClipFeatures:
    entry: CorpusEntry
    mel: np.ndarray          # raw log-mel (T, n_mels)
    f0: F0Contour | None = None


def compute_features(index: CorpusIndex, entries: list[CorpusEntry],
                     cfg: SpectrogramConfig, with_f0: bool = False) -> list[ClipFeatures]:
    out = []
    for e in entries:
        clip = index.load(e)
        mel = mel_spectrogram(clip, cfg).frames
        f0 = extract_f0(clip, cfg) if with_f0 else None
        out.append(ClipFeatures(e, mel, f0))
    return out


def batch_frames(mels: list[np.ndarray], dtype=np.float32) -> np.ndarray:
    """Stack (T_i, F) arrays into (B, min T_i, F), cropping from the start."""
    T = min(m.shape[0] for m in mels)
    return np.stack([m[:T] for m in mels]).astype(dtype)


def to_mel(frames: np.ndarray, cfg: SpectrogramConfig) -> MelSpectrogram:
    return MelSpectrogram(np.asarray(frames, dtype=np.float64), cfg)
