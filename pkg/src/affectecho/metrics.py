"""Objective conversion metrics: MCD, SSIM, PCC and SER confusion."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .audio import F0Contour

N_CEPSTRA = 13
MCD_CONST = 10.0 / np.log(10.0)
SSIM_WINDOW = 7


class MetricError(ValueError):
    """Raised when a metric is undefined for its inputs."""


def _frames(x) -> np.ndarray:
    return np.asarray(getattr(x, "frames", x), dtype=np.float64)


def mel_cepstrum(frames: np.ndarray) -> np.ndarray:
    return dct(frames, type=2, norm="ortho", axis=-1)


def mcd(gen, ref, n_coeffs: int = N_CEPSTRA) -> float:
    """Mean per-frame mel-cepstral distortion in dB, c_1..c_n, frames already aligned."""
    a, b = _frames(gen), _frames(ref)
    if a.shape != b.shape:
        raise MetricError(f"frame mismatch: {a.shape} vs {b.shape}")
    d = mel_cepstrum(a)[:, 1:n_coeffs + 1] - mel_cepstrum(b)[:, 1:n_coeffs + 1]
    return float(np.mean(MCD_CONST * np.sqrt(2.0 * np.sum(d * d, axis=1))))


def ssim(gen, ref, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all valid ``window`` x ``window`` uniform patches.

    C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L the value range of ``ref``;
    patch statistics use population (1/N) moments.
    """
    x, y = _frames(gen), _frames(ref)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        raise MetricError(f"need at least {window} frames and bins, got {x.shape}")
    L = float(y.max() - y.min()) or 1.0
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    px = sliding_window_view(x, (window, window))
    py = sliding_window_view(y, (window, window))
    mx, my = px.mean(axis=(-1, -2)), py.mean(axis=(-1, -2))
    vx = (px * px).mean(axis=(-1, -2)) - mx * mx
    vy = (py * py).mean(axis=(-1, -2)) - my * my
    cxy = (px * py).mean(axis=(-1, -2)) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(np.clip(s.mean(), -1.0, 1.0))


def pcc(f: F0Contour, g: F0Contour) -> float:
    """Pearson correlation over frames voiced in both contours."""
    n = min(len(f), len(g))
    both = f.voiced[:n] & g.voiced[:n]
    if both.sum() < 2:
        raise MetricError(f"only {int(both.sum())} jointly voiced frames")
    a = f.f0[:n][both] - f.f0[:n][both].mean()
    b = g.f0[:n][both] - g.f0[:n][both].mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den == 0:
        raise MetricError("zero variance contour")
    return float(np.clip((a * b).sum() / den, -1.0, 1.0))


def confusion_matrix(true, pred, n: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalised confusion in percent and the per-row counts."""
    counts = np.zeros((n, n))
    for t, p in zip(true, pred):
        counts[int(t), int(p)] += 1
    rows = counts.sum(axis=1)
    pct = np.divide(counts * 100.0, rows[:, None], out=np.zeros_like(counts), where=rows[:, None] > 0)
    return pct, rows.astype(int)


def ser_accuracy(true, pred, n: int = 5) -> tuple[float, np.ndarray]:
    true = np.asarray(true, dtype=int)
    pred = np.asarray(pred, dtype=int)
    if true.size == 0:
        raise MetricError("empty evaluation set")
    return float(np.mean(true == pred)), confusion_matrix(true, pred, n)[0]
