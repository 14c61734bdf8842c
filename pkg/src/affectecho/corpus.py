"""Synthetic emotional speech and corpus indexing.

The synthesiser produces short "utterances" of formant-filtered glottal pulse
syllables.  An utterance fixes the syllable slots, vowels and tones; an
emotion profile sets pitch level and movement, loudness, articulation rate
and jitter.  Emotional renditions of one utterance share syllable onsets, so
every emotional clip has a time-aligned neutral twin.
"""
from __future__ import annotations

import json
import logging
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio import SAMPLE_RATE, AudioClip, AudioError, load_wav, save_wav

log = logging.getLogger(__name__)

EMOTIONS = ("Angry", "Happy", "Neutral", "Sad", "Surprised")
NEUTRAL = EMOTIONS.index("Neutral")
CONTOURS = ("rising", "falling", "flat", "peaked")
SPLITS = ("train", "val", "test")


def emotion_index(name: str) -> int:
    key = name.strip().lower()
    if key == "surprise":
        key = "surprised"
    for i, e in enumerate(EMOTIONS):
        if e.lower() == key:
            return i
    raise ValueError(f"unknown emotion {name!r}")


@dataclass(frozen=True)
class EmotionProfile:
    f0_mean: float
    f0_range: float
    energy: float
    rate: float
    jitter: float
    contour_shape: str = "flat"

    def __post_init__(self):
        if self.f0_mean <= 0:
            raise ValueError("f0_mean must be positive")
        if not 0 <= self.jitter < 0.2:
            raise ValueError("jitter must be in [0, 0.2)")
        if self.contour_shape not in CONTOURS:
            raise ValueError(f"contour_shape must be one of {CONTOURS}")
        if self.rate <= 0 or self.energy <= 0:
            raise ValueError("rate and energy must be positive")


# Angry / Happy / Surprised are deliberately close; Sad sits far below.
DEFAULT_PROFILES = {
    "Angry": EmotionProfile(210.0, 50.0, 1.0, 5.5, 0.015, "falling"),
    "Happy": EmotionProfile(245.0, 70.0, 0.8, 5.0, 0.008, "rising"),
    "Neutral": EmotionProfile(150.0, 20.0, 0.5, 4.0, 0.004, "flat"),
    "Sad": EmotionProfile(120.0, 12.0, 0.22, 2.5, 0.006, "falling"),
    "Surprised": EmotionProfile(285.0, 90.0, 0.75, 4.5, 0.008, "peaked"),
}

# five intensity levels: scale of the deviation from the neutral profile
INTENSITY_LEVELS = (0.6, 0.8, 1.0, 1.2, 1.4)


def scale_profile(profile: EmotionProfile, neutral: EmotionProfile, intensity: float,
                  pitch_factor: float = 1.0) -> EmotionProfile:
    def mix(a, b):
        return b + (a - b) * intensity
    return replace(
        profile,
        f0_mean=mix(profile.f0_mean, neutral.f0_mean) * pitch_factor,
        f0_range=max(0.0, mix(profile.f0_range, neutral.f0_range)) * pitch_factor,
        energy=max(0.05, mix(profile.energy, neutral.energy)),
        rate=max(1.0, mix(profile.rate, neutral.rate)),
        jitter=float(np.clip(mix(profile.jitter, neutral.jitter), 0.0, 0.19)),
    )


# (F1, F2, F3) in Hz
VOWELS = {
    "A": [(730, 1090, 2440), (270, 2290, 3010), (530, 1840, 2480), (570, 840, 2410), (300, 870, 2240)],
    "B": [(850, 1220, 2810), (290, 2050, 2850), (390, 1650, 2600), (460, 760, 2700), (660, 1700, 2400)],
}
# tone shapes over a syllable, fraction of f0 at start/end
TONES = ((0.08, 0.08), (-0.06, 0.10), (0.04, -0.10), (-0.02, -0.02))


def _contour(shape: str, u: np.ndarray) -> np.ndarray:
    if shape == "rising":
        return u - 0.5
    if shape == "falling":
        return 0.5 - u
    if shape == "peaked":
        return 0.5 - np.abs(u - 0.5) * 2.0
    return np.zeros_like(u)


def _resonator(freq: float, bw: float, sr: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.exp(-np.pi * bw / sr)
    theta = 2 * np.pi * freq / sr
    a = np.array([1.0, -2 * r * np.cos(theta), r * r])
    return np.array([1.0 - r]), a


def _utterance_layout(utterance_seed: int, language: str, duration: float):
    rng = np.random.default_rng([int(utterance_seed), 7])
    n_slots = max(2, int(round(duration * 4)) + int(rng.integers(-1, 2)))
    slot = duration / n_slots
    onsets = (np.arange(n_slots) + rng.uniform(0.0, 0.12, n_slots)) * slot
    vowels = rng.integers(0, len(VOWELS[language]), n_slots)
    tones = rng.integers(0, len(TONES), n_slots)
    return slot, onsets, vowels, tones


def synth_clip(profile: EmotionProfile, speaker_seed: int, utterance_seed: int,
               language: str = "A", duration: float = 1.0,
               sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Render one utterance in the given emotion profile.

    The utterance seed fixes syllable onsets, vowels and (language B) lexical
    tones; the speaker seed fixes vocal-tract scaling and voice quality.
    ``profile.rate`` sets the articulation rate: each syllable nucleus lasts
    ``0.7 * 4 / rate`` slot lengths, capped at the slot.
    """
    if language not in VOWELS:
        raise ValueError(f"language must be one of {sorted(VOWELS)}")
    sr = sample_rate
    n = int(round(duration * sr))
    spk = np.random.default_rng([int(speaker_seed), 11])
    formant_scale = spk.uniform(0.9, 1.12)
    tilt = spk.uniform(0.3, 0.7)
    noise_level = spk.uniform(1.5e-4, 4e-4)
    rng = np.random.default_rng([int(speaker_seed), int(utterance_seed), ord(language),
                                 int(profile.f0_mean * 1000), int(profile.energy * 1000)])
    slot, onsets, vowels, tones = _utterance_layout(utterance_seed, language, duration)

    t = np.arange(n) / sr
    f0 = profile.f0_mean + profile.f0_range * _contour(profile.contour_shape, t / duration)
    nucleus = min(0.95 * slot, 0.7 * slot * 4.0 / profile.rate)
    gate = np.zeros(n)
    voiced_f0 = f0.copy()
    for i, start in enumerate(onsets):
        s = int(start * sr)
        e = min(n, int((start + nucleus) * sr))
        if e - s < 8:
            continue
        length = e - s
        if language == "B":
            a0, a1 = TONES[tones[i]]
            voiced_f0[s:e] *= 1.0 + np.linspace(a0, a1, length)
        ramp_in = min(int(0.015 * sr), length // 2)
        ramp_out = min(int(0.03 * sr), length // 2)
        env = np.ones(length)
        env[:ramp_in] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp_in) / ramp_in)
        env[length - ramp_out:] = 0.5 + 0.5 * np.cos(np.pi * np.arange(ramp_out) / ramp_out)
        gate[s:e] = env
    voiced_f0 = np.maximum(voiced_f0, 30.0)

    # glottal pulses at phase wraps; jitter perturbs each period
    phase = np.cumsum(voiced_f0 / sr)
    period_idx = np.floor(phase).astype(int)
    if profile.jitter > 0:
        pert = 1.0 + profile.jitter * rng.standard_normal(period_idx[-1] + 2)
        phase = np.cumsum(voiced_f0 * pert[period_idx] / sr)
    pulses = np.zeros(n)
    wraps = np.nonzero(np.diff(np.floor(phase)) > 0)[0] + 1
    pulses[wraps] = 1.0
    src = lfilter([1.0 - tilt], [1.0, -tilt], pulses)

    out = np.zeros(n)
    for i, start in enumerate(onsets):
        s = int(start * sr)
        e = min(n, int((start + nucleus) * sr))
        if e - s < 8:
            continue
        seg = src[max(0, s - 400):e]
        for fk, bw in zip(VOWELS[language][vowels[i]], (80.0, 100.0, 120.0)):
            b, a = _resonator(fk * formant_scale, bw, sr)
            seg = lfilter(b, a, seg)
        seg = seg[s - max(0, s - 400):]
        rms = np.sqrt(np.mean(seg ** 2)) + 1e-12
        out[s:e] += seg / rms * gate[s:e]
    out *= 0.08 * profile.energy
    out += noise_level * rng.standard_normal(n)
    peak = np.max(np.abs(out))
    if peak > 0.99:
        out *= 0.99 / peak
    return AudioClip(out, sr)


# -- corpus index --------------------------------------------------------------
@dataclass
class CorpusEntry:
    clip_id: str
    path: str
    speaker: str
    emotion: str
    language: str
    utterance_id: str
    role: str = "emotional"   # or "neutral": the parallel neutral rendition
    split: str = "train"
    intensity: int | None = None
    synth: dict | None = None

    @property
    def label(self) -> int:
        return emotion_index(self.emotion)


@dataclass
class CorpusIndex:
    entries: list[CorpusEntry] = field(default_factory=list)
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def select(self, split: str | None = None, role: str | None = "emotional",
               language: str | None = None, emotion: str | None = None) -> list[CorpusEntry]:
        out = []
        for e in self.entries:
            if split is not None and e.split != split:
                continue
            if role is not None and e.role != role:
                continue
            if language is not None and e.language != language:
                continue
            if emotion is not None and e.emotion != emotion:
                continue
            out.append(e)
        return out

    def neutral_for(self, entry: CorpusEntry) -> CorpusEntry | None:
        """The neutral rendition of ``entry``'s utterance by the same speaker."""
        cache = getattr(self, "_neutral_cache", None)
        if cache is None:
            cache = {}
            for e in self.entries:
                if e.role == "neutral":
                    cache[(e.speaker, e.utterance_id)] = e
            for e in self.entries:
                if e.role == "emotional" and e.emotion == "Neutral":
                    cache.setdefault((e.speaker, e.utterance_id), e)
            self._neutral_cache = cache
        return cache.get((entry.speaker, entry.utterance_id))

    def clip_path(self, entry: CorpusEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load(self, entry: CorpusEntry) -> AudioClip:
        return load_wav(self.clip_path(entry))

    def languages(self) -> list[str]:
        return sorted({e.language for e in self.entries})

    def speakers(self) -> list[str]:
        return sorted({e.speaker for e in self.entries})

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path, root=None) -> "CorpusIndex":
        path = Path(path)
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(CorpusEntry(**json.loads(line)))
        return cls(entries, Path(root) if root is not None else path.parent)


def open_corpus(directory) -> CorpusIndex:
    directory = Path(directory)
    idx = directory / "index.jsonl"
    if not idx.is_file():
        raise FileNotFoundError(f"no corpus index at {idx}")
    return CorpusIndex.from_jsonl(idx, directory)


def assign_splits(groups: dict[str, str], seed: int,
                  fractions=(0.7, 0.2, 0.1)) -> dict[str, str]:
    """Split utterance ids 70/20/10, stratified by a group key (the emotion).

    Each id gets its within-group rank fraction under a seeded shuffle; ids
    are then sorted globally by that fraction and cut at the global counts.
    """
    rng = np.random.default_rng(seed)
    by_group: dict[str, list[str]] = defaultdict(list)
    for uid in sorted(groups):
        by_group[groups[uid]].append(uid)
    keyed = []
    for g in sorted(by_group):
        ids = by_group[g]
        order = rng.permutation(len(ids))
        for rank, j in enumerate(order):
            keyed.append(((rank + 0.5) / len(ids), rng.random(), ids[j]))
    keyed.sort()
    n = len(keyed)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    out = {}
    for i, (_, _, uid) in enumerate(keyed):
        out[uid] = "train" if i < n_train else "val" if i < n_train + n_val else "test"
    return out


def speaker_pitch_factor(speaker: int) -> float:
    return (0.92, 1.08, 0.97, 1.03)[speaker % 4]


def build_synthetic_corpus(out_dir, n_per_emotion: int = 100, speakers: int = 2,
                           languages: int = 2, seed: int = 0, duration: float = 1.0,
                           profiles: dict[str, EmotionProfile] | None = None) -> CorpusIndex:
    """Write emotional clips plus a parallel neutral rendition of each."""
    if n_per_emotion < 1 or speakers < 1 or languages not in (1, 2):
        raise ValueError("need n_per_emotion >= 1, speakers >= 1, languages in {1, 2}")
    profiles = profiles or DEFAULT_PROFILES
    out_dir = Path(out_dir)
    clip_dir = out_dir / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)
    langs = ["A", "B"][:languages]
    rng = np.random.default_rng(seed)
    neutral = profiles["Neutral"]
    entries: list[CorpusEntry] = []
    for lang in langs:
        for s in range(speakers):
            speaker = f"{lang}{s:02d}"
            speaker_seed = seed * 1000 + s
            for emo in EMOTIONS:
                for i in range(n_per_emotion):
                    uid = f"{speaker}-{emo[:3].lower()}-{i:04d}"
                    utt_seed = int(rng.integers(0, 2 ** 31 - 1))
                    level = int(rng.integers(0, len(INTENSITY_LEVELS)))
                    jit = rng.normal(0.0, 1.0, 2)
                    base = scale_profile(profiles[emo], neutral, INTENSITY_LEVELS[level],
                                         speaker_pitch_factor(s))
                    prof = replace(base, f0_mean=base.f0_mean * (1 + 0.03 * jit[0]),
                                   energy=base.energy * (1 + 0.08 * jit[1]))
                    neu = scale_profile(neutral, neutral, 1.0, speaker_pitch_factor(s))
                    for role, p in (("emotional", prof), ("neutral", neu)):
                        cid = uid if role == "emotional" else f"{uid}-neu"
                        clip = synth_clip(p, speaker_seed, utt_seed, lang, duration)
                        rel = f"clips/{cid}.wav"
                        save_wav(clip, out_dir / rel)
                        entries.append(CorpusEntry(
                            clip_id=cid, path=rel, speaker=speaker,
                            emotion=emo if role == "emotional" else "Neutral",
                            language=lang, utterance_id=uid, role=role,
                            intensity=level + 1 if role == "emotional" else None,
                            synth={"profile": asdict(p), "speaker_seed": speaker_seed,
                                   "utterance_seed": utt_seed, "duration": duration}))
    splits = assign_splits({e.utterance_id: e.emotion for e in entries if e.role == "emotional"},
                           seed)
    for e in entries:
        e.split = splits[e.utterance_id]
    index = CorpusIndex(entries, out_dir)
    index.to_jsonl(out_dir / "index.jsonl")
    meta = {"kind": "synthetic", "n_per_emotion": n_per_emotion, "speakers": speakers,
            "languages": languages, "seed": seed, "duration": duration}
    (out_dir / "corpus.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return index


_ESD_NUM = re.compile(r"(\d+)$")


def load_esd_layout(root, seed: int = 0, utterances_per_emotion: int = 350) -> CorpusIndex:
    """Index an ESD-style tree ``speaker/emotion/**/*.wav``.

    Speakers 0001-0010 are tagged ``zh`` and 0011-0020 ``en``.  ESD numbers
    each emotion's block of the same sentence list consecutively, so the
    content id is ``(number - 1) % utterances_per_emotion``.
    """
    root = Path(root)
    entries = []
    for spk_dir in sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []:
        try:
            num = int(spk_dir.name)
            language = "zh" if 1 <= num <= 10 else "en" if 11 <= num <= 20 else "unknown"
        except ValueError:
            language = "unknown"
        seen = set()
        for emo_dir in sorted(p for p in spk_dir.iterdir() if p.is_dir()):
            try:
                emo = EMOTIONS[emotion_index(emo_dir.name)]
            except ValueError:
                log.warning("skipping unknown emotion folder %s", emo_dir)
                continue
            seen.add(emo)
            for wav in sorted(emo_dir.rglob("*.wav")):
                try:
                    load_wav(wav)
                except (AudioError, ValueError, OSError) as exc:
                    log.warning("skipping unreadable clip %s: %s", wav, exc)
                    continue
                m = _ESD_NUM.search(wav.stem)
                content = (int(m.group(1)) - 1) % utterances_per_emotion if m else wav.stem
                entries.append(CorpusEntry(
                    clip_id=f"{spk_dir.name}-{wav.stem}", path=str(wav.relative_to(root)),
                    speaker=spk_dir.name, emotion=emo, language=language,
                    utterance_id=f"{spk_dir.name}-{content}"))
        missing = set(EMOTIONS) - seen
        if missing:
            log.warning("speaker %s has no clips for %s", spk_dir.name, ", ".join(sorted(missing)))
    if not entries:
        raise ValueError(f"no usable clips under {root}")
    # stratify by speaker: content ids are shared across emotions
    splits = assign_splits({e.utterance_id: e.speaker for e in entries}, seed)
    for e in entries:
        e.split = splits[e.utterance_id]
    return CorpusIndex(entries, root)
