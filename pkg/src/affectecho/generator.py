"""Emotion-conditioned mel-to-mel generator and its training losses.

Layout (all channels-last, time kept at full resolution):

    lift 80->W, Fourier layer gelu(spectral(h) + W h), positional encoding,
    transformer block, residual encoder, + projected [style; emotion],
    residual decoder, W->80 (optionally plus the input mel).

The style vector is a learned projection of F0 summary statistics; the
emotion vector is a 64-d codebook row picked by the frozen classifier.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .audio import AudioClip, MelSpectrogram, SpectrogramConfig, extract_f0, invert_mel, mel_spectrogram
from .autodiff import Tensor, no_grad
from .classifier import DOMINANT, VQClassifier, code_cross_entropy, cosine_scores, encode, quantize
from .corpus import EMOTIONS
from .features import N_STYLE_STATS, MelNormalizer, f0_statistics
from .metrics import ssim
from .nn import Conv1d, Linear, Module, SpectralConv1d, TransformerBlock, sinusoidal_positions
from .optim import Adam

log = logging.getLogger(__name__)

EMOTION_DIM = 64
MIN_FRAMES = 2


@dataclass
class LossWeights:
    sc: float = 1.0
    pf: float = 0.1
    ser: float = 0.1

    def __post_init__(self):
        if min(self.sc, self.pf, self.ser) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class GeneratorConfig:
    n_mels: int = 80
    width: int = 128
    modes: int = 16
    n_transformer: int = 1
    n_res_blocks: int = 3
    kernel_size: int = 3
    ff_dim: int = 256
    style_dim: int = 32
    use_spectral_conv: bool = True
    residual_output: bool = False  # add the input mel to the decoder output
    sc_standard: bool = False      # ||y - G|| / ||y|| instead of the signed-norm form
    pf_telescoped: bool = False    # compare summed deltas instead of per-step deltas
    weights: LossWeights = None
    lr: float = 1e-4
    batch_size: int = 10
    epochs: int = 200
    seed: int = 0
    ssim_subset: int = 16

    def __post_init__(self):
        if self.weights is None:
            self.weights = LossWeights()
        elif isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.width < 1 or self.modes < 1:
            raise ValueError("width and modes must be positive")


class ResBlock(Module):
    def __init__(self, width: int, kernel_size: int, rng, dtype):
        self.c1 = Conv1d(width, width, kernel_size, rng, dtype=dtype)
        self.c2 = Conv1d(width, width, kernel_size, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.c2(ad.gelu(self.c1(x)))


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig | None = None, dtype=np.float32):
        cfg = cfg or GeneratorConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        W = cfg.width
        self.lift = Linear(cfg.n_mels, W, rng, dtype)
        if cfg.use_spectral_conv:
            self.spectral = SpectralConv1d(W, cfg.modes, rng, dtype)
            self.pointwise = Linear(W, W, rng, dtype)
        else:
            self.front_conv = Conv1d(W, W, cfg.kernel_size, rng, dtype=dtype)
        self.blocks = [TransformerBlock(W, cfg.ff_dim, rng, dtype) for _ in range(cfg.n_transformer)]
        self.encoder = [ResBlock(W, cfg.kernel_size, rng, dtype) for _ in range(cfg.n_res_blocks)]
        self.style = Linear(N_STYLE_STATS, cfg.style_dim, rng, dtype)
        self.condition = Linear(cfg.style_dim + EMOTION_DIM, W, rng, dtype)
        self.decoder = [ResBlock(W, cfg.kernel_size, rng, dtype) for _ in range(cfg.n_res_blocks)]
        self.out = Linear(W, cfg.n_mels, rng, dtype)
        if cfg.residual_output:
            self.out.weight.data *= 0.1
            self.out.bias.data[:] = 0
        self.norm = MelNormalizer()
        self.trained = False

    @property
    def dtype(self):
        return self.out.weight.dtype

    def style_vector(self, stats) -> Tensor:
        if not isinstance(stats, Tensor):
            stats = Tensor(np.asarray(stats, dtype=self.dtype))
        return ad.tanh(self.style(stats))

    def forward(self, x, style: Tensor, emotion) -> Tensor:
        """x: (B, T, 80) normalised mels; style: (B, style_dim); emotion: (B, 64)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if not isinstance(emotion, Tensor):
            emotion = Tensor(np.asarray(emotion, dtype=self.dtype))
        if x.ndim != 3 or x.shape[2] != self.cfg.n_mels:
            raise ad.ShapeError(f"expected (B, T, {self.cfg.n_mels}) input, got {x.shape}")
        if emotion.shape[-1] != EMOTION_DIM or style.shape[-1] != self.cfg.style_dim:
            raise ad.ShapeError(f"conditioning shapes {style.shape} / {emotion.shape} do not match "
                                f"style_dim {self.cfg.style_dim} / emotion {EMOTION_DIM}")
        if x.shape[1] < MIN_FRAMES:
            raise ValueError(f"need at least {MIN_FRAMES} frames, got {x.shape[1]}")
        h = self.lift(x)
        if self.cfg.use_spectral_conv:
            h = ad.gelu(self.spectral(h) + self.pointwise(h))
        else:
            h = ad.gelu(self.front_conv(h))
        h = h + sinusoidal_positions(h.shape[1], h.shape[2], h.dtype)
        for blk in self.blocks:
            h = blk(h)
        for blk in self.encoder:
            h = blk(h)
        cond = self.condition(ad.concat([style, emotion], axis=-1))
        B, W = cond.shape
        h = h + cond.reshape(B, 1, W)
        for blk in self.decoder:
            h = blk(h)
        y = self.out(h)
        return x + y if self.cfg.residual_output else y


# -- conditioning ----------------------------------------------------------------
def style_stats(mel_or_clip, cfg: SpectrogramConfig | None = None) -> np.ndarray:
    if isinstance(mel_or_clip, AudioClip):
        return f0_statistics(extract_f0(mel_or_clip, cfg))
    return f0_statistics(mel_or_clip)


def style_embedding(model: Generator, contour) -> np.ndarray:
    """F0 contour -> style vector of length ``style_dim``."""
    with no_grad():
        return model.style_vector(f0_statistics(contour)[None]).data[0]


def emotion_embedding(classifier: VQClassifier, mel) -> tuple[np.ndarray, int]:
    """Codebook row of the reference's hard code, and the code index."""
    z = encode(classifier, mel).reshape(-1)
    post = quantize(classifier.codebook.data, z, classifier.cfg.temperature)
    return post.embedding, post.hard_index


def generate(model: Generator, input_mel: MelSpectrogram, style: np.ndarray,
             emotion: np.ndarray) -> MelSpectrogram:
    """Convert one raw log-mel; output has the input's frame count."""
    emotion = np.asarray(emotion)
    style = np.asarray(style)
    if emotion.shape != (EMOTION_DIM,):
        raise ad.ShapeError(f"emotion embedding must have shape ({EMOTION_DIM},), got {emotion.shape}")
    if style.shape != (model.cfg.style_dim,):
        raise ad.ShapeError(f"style vector must have shape ({model.cfg.style_dim},), got {style.shape}")
    x = model.norm(input_mel.frames)[None].astype(model.dtype)
    with no_grad():
        y = model.forward(x, Tensor(style[None].astype(model.dtype)), emotion[None]).data[0]
    return MelSpectrogram(model.norm.inverse(y.astype(np.float64)), input_mel.config)


# -- losses ------------------------------------------------------------------------
def _as_t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _frames(x):
    return getattr(x, "frames", x)


def _check_same(g: Tensor, y: Tensor) -> None:
    if g.shape != y.shape:
        raise ad.ShapeError(f"generated {g.shape} and target {y.shape} differ in shape")


def _batched(t: Tensor) -> Tensor:
    return t.reshape(1, *t.shape) if t.ndim == 2 else t


def reconstruction_loss(gen, target) -> Tensor:
    """Mean absolute error over every entry."""
    g, y = _as_t(_frames(gen)), _as_t(_frames(target))
    _check_same(g, y)
    return ad.tabs(g - y).mean()


def spectral_convergence_loss(gen, target, standard: bool = False) -> Tensor:
    """|(||G|| - ||y||) / ||G|| |, per clip, averaged; ``standard`` gives ||y - G|| / ||y||."""
    g, y = _batched(_as_t(_frames(gen))), _batched(_as_t(_frames(target)))
    _check_same(g, y)
    B = g.shape[0]
    gn = ad.l2_norm(g.reshape(B, -1), axis=1)
    yn = ad.l2_norm(y.reshape(B, -1), axis=1)
    if standard:
        if np.any(yn.data == 0):
            raise ValueError("target has zero norm")
        return (ad.l2_norm((y - g).reshape(B, -1), axis=1) / yn).mean()
    if np.any(gn.data == 0):
        raise ValueError("generated spectrogram has zero norm")
    return ad.tabs((gn - yn) / gn).mean()


def pitch_flow_loss(gen, target, telescoped: bool = False) -> Tensor:
    """Match frame-to-frame changes: ||dG - dy||_2 per clip, averaged.

    ``telescoped`` sums the deltas over time first, i.e. compares the
    last-minus-first frame differences.
    """
    g, y = _batched(_as_t(_frames(gen))), _batched(_as_t(_frames(target)))
    _check_same(g, y)
    B, T = g.shape[0], g.shape[1]
    if T < 2:
        raise ValueError("pitch flow needs at least 2 frames")
    d = (g[:, 1:] - g[:, :-1]) - (y[:, 1:] - y[:, :-1])
    if telescoped:
        d = d.sum(axis=1)
    return ad.l2_norm(d.reshape(B, -1), axis=1).mean()


def speech_emotion_loss(classifier: VQClassifier, gen_norm, ref_codes) -> Tensor:
    """-(1/25) log q~(ref code | generated), averaged; classifier weights untouched.

    ``gen_norm`` is in the classifier's normalised mel space, ``ref_codes``
    the hard codebook indices of the references.
    """
    ref_codes = np.atleast_1d(np.asarray(ref_codes, dtype=int))
    g = _batched(gen_norm if isinstance(gen_norm, Tensor) else Tensor(np.asarray(gen_norm)))
    logq = ad.log_softmax(classifier.cosine_logits(classifier.encode_batch(g)))
    return code_cross_entropy(logq, ref_codes)


def total_loss(parts: dict, weights: LossWeights | None = None):
    w = weights or LossWeights()
    return parts["rc"] + w.sc * parts["sc"] + w.pf * parts["pf"] + w.ser * parts["ser"]


def generator_loss(model: Generator, classifier: VQClassifier, x, style_in, emotion, target,
                   ref_codes) -> tuple[Tensor, dict]:
    """Forward a normalised batch and return the weighted total with its parts."""
    cfg = model.cfg
    out = model.forward(x, model.style_vector(style_in), emotion)
    y = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=model.dtype))
    parts = {
        "rc": reconstruction_loss(out, y),
        "sc": spectral_convergence_loss(out, y, cfg.sc_standard),
        "pf": pitch_flow_loss(out, y, cfg.pf_telescoped),
    }
    # generator and classifier normalisers are affine maps of the same log-mel
    to_clf = out * (model.norm.std / classifier.norm.std) + (model.norm.mean - classifier.norm.mean) / classifier.norm.std
    parts["ser"] = speech_emotion_loss(classifier, to_clf, ref_codes)
    parts["out"] = out
    return total_loss(parts, cfg.weights), parts


# -- training ------------------------------------------------------------------------
@dataclass
class TrainingTriple:
    """Neutral input, emotional target, and the target's style/emotion conditioning."""
    clip_id: str
    input_mel: np.ndarray
    target_mel: np.ndarray
    input_stats: np.ndarray
    ref_mel: np.ndarray | None = None


def train_generator(model: Generator, classifier: VQClassifier, triples: list[TrainingTriple],
                    epochs: int | None = None, batch_size: int | None = None,
                    seed: int | None = None, progress=None) -> list[dict]:
    """Adam on the weighted generator loss with the classifier frozen.

    Reference codes are computed once up front (the classifier does not
    change).  Each history row holds the epoch means of rc/sc/pf/ser/total
    and the mean mel SSIM of a fixed training subset after the epoch.
    """
    if not triples:
        raise ValueError("training corpus is empty")
    if not getattr(classifier, "trained", False) or not classifier.cfg.use_vq:
        raise ValueError("generator training needs a trained VQ classifier")
    cfg = model.cfg
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    model.norm = MelNormalizer(classifier.norm.mean, classifier.norm.std)

    refs = [t.ref_mel if t.ref_mel is not None else t.target_mel for t in triples]
    z = np.concatenate([_encode_rows(classifier, refs[i:i + 64]) for i in range(0, len(refs), 64)])
    codes = np.argmax(cosine_scores(classifier.codebook.data, z), axis=1)
    emos = classifier.codebook.data[codes].astype(model.dtype)
    xs = [model.norm(t.input_mel).astype(model.dtype) for t in triples]
    ys = [model.norm(t.target_mel).astype(model.dtype) for t in triples]
    stats = np.stack([t.input_stats for t in triples]).astype(model.dtype)
    subset = np.arange(min(cfg.ssim_subset, len(triples)))

    saved = [p.requires_grad for p in classifier.parameters()]
    classifier.freeze()
    opt = Adam(model.parameters(), lr=cfg.lr)
    history = []
    n = len(triples)
    try:
        for epoch in range(1, epochs + 1):
            order = rng.permutation(n)
            sums = dict.fromkeys(("rc", "sc", "pf", "ser", "total"), 0.0)
            for i in range(0, n, batch_size):
                idx = order[i:i + batch_size]
                T = min(min(xs[j].shape[0], ys[j].shape[0]) for j in idx)
                xb = np.stack([xs[j][:T] for j in idx])
                yb = np.stack([ys[j][:T] for j in idx])
                opt.zero_grad()
                loss, parts = generator_loss(model, classifier, xb, stats[idx], emos[idx], yb, codes[idx])
                loss.backward()
                opt.step()
                for k in ("rc", "sc", "pf", "ser"):
                    sums[k] += parts[k].item() * len(idx)
                sums["total"] += loss.item() * len(idx)
            row = {"epoch": epoch, **{k: v / n for k, v in sums.items()}}
            row["train_ssim"] = _subset_ssim(model, xs, ys, stats, emos, subset)
            history.append(row)
            log.info("generator epoch %d: %s", epoch, row)
            if progress:
                progress(row)
    finally:
        for p, flag in zip(classifier.parameters(), saved):
            p.requires_grad = flag
    model.trained = True
    return history


def _encode_rows(classifier: VQClassifier, mels: list[np.ndarray]) -> np.ndarray:
    with no_grad():
        return classifier.encode_batch(classifier.prepare(list(mels))).data


def _subset_ssim(model: Generator, xs, ys, stats, emos, subset) -> float:
    vals = []
    with no_grad():
        for j in subset:
            out = model.forward(xs[j][None], model.style_vector(stats[j:j + 1]), emos[j:j + 1]).data[0]
            T = min(out.shape[0], ys[j].shape[0])
            vals.append(ssim(model.norm.inverse(out[:T].astype(np.float64)),
                             model.norm.inverse(ys[j][:T].astype(np.float64))))
    return float(np.mean(vals)) if vals else float("nan")


# -- conversion ------------------------------------------------------------------------
def convert(model: Generator, classifier: VQClassifier, input_clip: AudioClip,
            reference_clip: AudioClip, cfg: SpectrogramConfig | None = None,
            gl_iterations: int = 32, seed: int = 0, vocode: bool = True) -> tuple[AudioClip | None, dict]:
    """Transfer the reference clip's emotion onto the input clip.

    Returns the vocoded waveform (None with ``vocode=False``) and
    diagnostics: reference code index and label, input and output mels.
    """
    cfg = cfg or SpectrogramConfig()
    for name, clip in (("input", input_clip), ("reference", reference_clip)):
        if len(clip) < cfg.win_length or cfg.n_frames(len(clip)) < MIN_FRAMES:
            raise ValueError(f"{name} clip too short: {len(clip)} samples, need at least "
                             f"{cfg.win_length + (MIN_FRAMES - 1) * cfg.hop_length}")
    mel_in = mel_spectrogram(input_clip, cfg)
    mel_ref = mel_spectrogram(reference_clip, cfg)
    style = style_embedding(model, extract_f0(input_clip, cfg))
    emotion, code = emotion_embedding(classifier, mel_ref)
    mel_out = generate(model, mel_in, style, emotion)
    wav = invert_mel(mel_out, gl_iterations, seed) if vocode else None
    peak = float(np.max(np.abs(wav.samples))) if wav is not None else 0.0
    if peak > 0.99:
        wav = AudioClip(wav.samples * (0.99 / peak), wav.sample_rate)
    label = int(DOMINANT[code])
    diag = {"hard_index": code, "label": label, "emotion": EMOTIONS[label],
            "mel_in": mel_in, "mel_out": mel_out, "mel_ref": mel_ref, "peak_scaled": peak > 0.99}
    return wav, diag


def config_dict(model: Generator) -> dict:
    return asdict(model.cfg)
