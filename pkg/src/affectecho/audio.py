"""Waveform <-> log-mel <-> F0 conversions.

Framing is the same everywhere: frame ``t`` covers samples
``[t*hop, t*hop + win_length)``, there is no centre padding, and the frame
count is ``1 + (len - win_length) // hop_length``.  Frames are Hann-windowed
and zero-padded to ``n_fft`` before the real FFT.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

log = logging.getLogger(__name__)

SAMPLE_RATE = 24000


class AudioError(ValueError):
    pass


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise AudioError("audio clip is empty")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("audio clip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class SpectrogramConfig:
    sample_rate: int = SAMPLE_RATE
    n_mels: int = 80
    n_fft: int = 2048
    win_length: int = 1200
    hop_length: int = 300
    f_min: float = 0.0
    f_max: float = 12000.0
    log_floor: float = 1e-5

    def __post_init__(self):
        if not 1 <= self.win_length <= self.n_fft:
            raise ValueError(f"win_length {self.win_length} must be in [1, n_fft={self.n_fft}]")
        if not 1 <= self.hop_length <= self.win_length:
            raise ValueError(f"hop_length {self.hop_length} must be in [1, win_length={self.win_length}]")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not 0 <= self.f_min < self.f_max <= self.sample_rate / 2:
            raise ValueError(f"need 0 <= f_min < f_max <= {self.sample_rate / 2}, got {self.f_min}, {self.f_max}")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.win_length) // self.hop_length

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MelSpectrogram:
    """Log mel energies, shape (T, n_mels)."""

    frames: np.ndarray
    config: SpectrogramConfig = field(default_factory=SpectrogramConfig)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"mel frames must be (T>=1, n_mels), got {self.frames.shape}")
        if self.frames.shape[1] != self.config.n_mels:
            raise ValueError(f"mel has {self.frames.shape[1]} bins, config says {self.config.n_mels}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("mel spectrogram contains non-finite values")

    @property
    def T(self) -> int:
        return self.frames.shape[0]


@dataclass
class F0Contour:
    f0: np.ndarray
    voiced: np.ndarray
    hop_length: int = 300

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0.shape != self.voiced.shape:
            raise ValueError("f0 and voiced flags differ in length")
        if np.any((self.f0 == 0) == self.voiced):
            raise ValueError("f0 must be 0 exactly on unvoiced frames")

    def __len__(self) -> int:
        return self.f0.size


# -- WAV I/O ---------------------------------------------------------------
def load_wav(path) -> AudioClip:
    """Read a PCM or float WAV; stereo is averaged to mono."""
    path = Path(path)
    try:
        sr, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises ValueError / struct errors on bad headers
        raise AudioError(f"cannot read WAV file {path}: {exc}") from exc
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise AudioError(f"unsupported WAV sample type {data.dtype} in {path}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioError(f"WAV file {path} has no samples")
    return AudioClip(x, int(sr))


def save_wav(clip: AudioClip, path) -> None:
    """Write 16-bit PCM mono.  Samples outside [-1, 1] are clipped with a warning."""
    path = Path(path)
    if not path.parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {path.parent}")
    x = clip.samples
    if np.any(np.abs(x) > 1.0):
        warnings.warn(f"clipping {int(np.sum(np.abs(x) > 1.0))} samples outside [-1, 1]", stacklevel=2)
        x = np.clip(x, -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(path, clip.sample_rate, pcm)


def resample(clip: AudioClip, sample_rate: int) -> AudioClip:
    """Linear-interpolation resampling."""
    if clip.sample_rate == sample_rate:
        return clip
    n_out = max(1, int(round(len(clip) * sample_rate / clip.sample_rate)))
    t_out = np.arange(n_out) / sample_rate
    t_in = np.arange(len(clip)) / clip.sample_rate
    return AudioClip(np.interp(t_out, t_in, clip.samples), sample_rate)


# -- STFT ------------------------------------------------------------------
def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def frame_signal(x: np.ndarray, win_length: int, hop_length: int) -> np.ndarray:
    n = 1 + (x.size - win_length) // hop_length
    idx = np.arange(n)[:, None] * hop_length + np.arange(win_length)[None, :]
    return x[idx]


def stft(x: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """Complex STFT, shape (T, n_fft//2 + 1)."""
    frames = frame_signal(x, cfg.win_length, cfg.hop_length) * hann(cfg.win_length)
    return np.fft.rfft(frames, n=cfg.n_fft, axis=1)


def istft(spec: np.ndarray, cfg: SpectrogramConfig) -> np.ndarray:
    """Least-squares inverse of :func:`stft` (weighted overlap-add)."""
    T = spec.shape[0]
    w = hann(cfg.win_length)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1)[:, :cfg.win_length] * w
    n = (T - 1) * cfg.hop_length + cfg.win_length
    out = np.zeros(n)
    norm = np.zeros(n)
    for t in range(T):
        s = t * cfg.hop_length
        out[s:s + cfg.win_length] += frames[t]
        norm[s:s + cfg.win_length] += w * w
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    return out


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: SpectrogramConfig) -> np.ndarray:
    """The n_mels + 2 HTK-mel-spaced corner frequencies in Hz."""
    m = np.linspace(_hz_to_mel(cfg.f_min), _hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    return _mel_to_hz(m)


def mel_filterbank(cfg: SpectrogramConfig) -> np.ndarray:
    """Triangular HTK filterbank without area normalisation, (n_mels, n_fft//2+1)."""
    freqs = np.linspace(0, cfg.sample_rate / 2, cfg.n_fft // 2 + 1)
    pts = mel_band_edges(cfg)
    lo, mid, hi = pts[:-2, None], pts[1:-1, None], pts[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def _ensure_rate(clip: AudioClip, cfg: SpectrogramConfig) -> AudioClip:
    return resample(clip, cfg.sample_rate) if clip.sample_rate != cfg.sample_rate else clip


def power_spectrogram(clip: AudioClip, cfg: SpectrogramConfig) -> np.ndarray:
    clip = _ensure_rate(clip, cfg)
    if len(clip) < cfg.win_length:
        raise AudioError(f"clip has {len(clip)} samples; at least win_length={cfg.win_length} "
                         f"({cfg.win_length / cfg.sample_rate:.3f} s) are required")
    S = stft(clip.samples, cfg)
    return S.real ** 2 + S.imag ** 2


def mel_spectrogram(clip: AudioClip, cfg: SpectrogramConfig | None = None) -> MelSpectrogram:
    cfg = cfg or SpectrogramConfig()
    P = power_spectrogram(clip, cfg)
    mel = P @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(mel + cfg.log_floor), cfg)


# -- Griffin-Lim -------------------------------------------------------------
def _bin_weights(cfg: SpectrogramConfig) -> np.ndarray:
    # one-sided spectrum -> full-spectrum energy (interior bins appear twice)
    c = np.full(cfg.n_fft // 2 + 1, 2.0)
    c[0] = 1.0
    if cfg.n_fft % 2 == 0:
        c[-1] = 1.0
    return c


def spectral_convergence(x: np.ndarray, magnitude: np.ndarray, cfg: SpectrogramConfig) -> float:
    """|| |STFT(x)| - magnitude || / ||magnitude|| in the full-spectrum norm."""
    c = _bin_weights(cfg)
    diff = np.abs(stft(x, cfg)) - magnitude
    den = np.sqrt(np.sum(c * magnitude ** 2))
    num = np.sqrt(np.sum(c * diff ** 2))
    return float(num / den) if den > 0 else float(num)


def griffin_lim(magnitude: np.ndarray, cfg: SpectrogramConfig, iterations: int = 32,
                seed: int = 0, history: list | None = None) -> np.ndarray:
    """Phase retrieval from an STFT magnitude (T, n_fft//2+1)."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    x = istft(magnitude * phase, cfg)
    for _ in range(iterations):
        S = stft(x, cfg)
        if history is not None:
            history.append(spectral_convergence(x, magnitude, cfg))
        ang = np.angle(S)
        x = istft(magnitude * np.exp(1j * ang), cfg)
    if history is not None:
        history.append(spectral_convergence(x, magnitude, cfg))
    return x


def invert_mel(mel: MelSpectrogram, iterations: int = 32, seed: int = 0,
               history: list | None = None) -> AudioClip:
    """Mel -> linear magnitude via filterbank pseudo-inverse, then Griffin-Lim."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    cfg = mel.config
    power = np.maximum(np.exp(mel.frames) - cfg.log_floor, 0.0)
    lin = np.maximum(power @ np.linalg.pinv(mel_filterbank(cfg)).T, 0.0)
    x = griffin_lim(np.sqrt(lin), cfg, iterations, seed=seed, history=history)
    return AudioClip(x, cfg.sample_rate)


# -- F0 ----------------------------------------------------------------------
@dataclass
class PitchConfig:
    f_min: float = 60.0
    f_max: float = 600.0
    voicing_threshold: float = 0.3
    octave_tolerance: float = 0.9
    # voiced frames further than this (in octaves) from the median of their
    # voiced neighbours within +-2 frames are marked unvoiced
    outlier_octaves: float | None = 0.25


def extract_f0(clip: AudioClip, cfg: SpectrogramConfig | None = None,
               pitch: PitchConfig | None = None) -> F0Contour:
    """Per-frame F0 by normalised autocorrelation with parabolic peak refinement.

    A frame is voiced when its best normalised peak in the search range
    reaches ``voicing_threshold``.  Among peaks within ``octave_tolerance``
    of the best one the shortest lag wins, which suppresses sub-octave picks.
    """
    cfg = cfg or SpectrogramConfig()
    pitch = pitch or PitchConfig()
    clip = _ensure_rate(clip, cfg)
    if len(clip) < cfg.win_length:
        raise AudioError(f"clip has {len(clip)} samples; at least win_length={cfg.win_length} are required")
    sr = cfg.sample_rate
    W = cfg.win_length
    frames = frame_signal(clip.samples, W, cfg.hop_length)
    frames = frames - frames.mean(axis=1, keepdims=True)
    T = frames.shape[0]
    lag_lo = max(2, int(np.floor(sr / pitch.f_max)))
    lag_hi = min(W - 2, int(np.ceil(sr / pitch.f_min)))

    nfft = 1 << int(np.ceil(np.log2(2 * W)))
    F = np.fft.rfft(frames, n=nfft, axis=1)
    acf = np.fft.irfft(F.real ** 2 + F.imag ** 2, n=nfft, axis=1)[:, :W]
    sq = np.concatenate([np.zeros((T, 1)), np.cumsum(frames ** 2, axis=1)], axis=1)
    lags = np.arange(W)
    e_head = sq[:, W - lags]                # sum_{n < W-lag} x[n]^2
    e_tail = sq[:, W:W + 1] - sq[:, lags]   # sum_{n >= lag} x[n]^2
    den = np.sqrt(e_head * e_tail)
    total = sq[:, W]
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 1e-12 * np.maximum(total[:, None], 1e-300), acf / den, 0.0)

    f0 = np.zeros(T)
    voiced = np.zeros(T, dtype=bool)
    for t in range(T):
        if total[t] < 1e-10:
            continue
        seg = r[t, lag_lo - 1:lag_hi + 2]
        inner = seg[1:-1]
        is_peak = (inner >= seg[:-2]) & (inner > seg[2:])
        peaks = np.nonzero(is_peak)[0]
        if peaks.size == 0:
            continue
        best = inner[peaks].max()
        if best < pitch.voicing_threshold:
            continue
        k = peaks[np.argmax(inner[peaks] >= pitch.octave_tolerance * best)]
        a, b, c = seg[k], seg[k + 1], seg[k + 2]
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if denom < 0 else 0.0
        lag = lag_lo + k + delta
        hz = sr / lag
        if pitch.f_min <= hz <= pitch.f_max:
            f0[t] = hz
            voiced[t] = True
    if pitch.outlier_octaves is not None:
        f0, voiced = _drop_outliers(f0, voiced, pitch.outlier_octaves)
    return F0Contour(f0, voiced, cfg.hop_length)


def _drop_outliers(f0: np.ndarray, voiced: np.ndarray, octaves: float, radius: int = 2):
    # partially voiced frames at syllable edges tend to lock onto a formant period
    keep = voiced.copy()
    T = f0.size
    for t in np.nonzero(voiced)[0]:
        lo, hi = max(0, t - radius), min(T, t + radius + 1)
        nb = f0[lo:hi][voiced[lo:hi]]
        if nb.size >= 3 and abs(np.log2(f0[t] / np.median(nb))) > octaves:
            keep[t] = False
    return np.where(keep, f0, 0.0), keep
