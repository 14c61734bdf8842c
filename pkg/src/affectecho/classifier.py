"""Vector-quantised emotion classifier.

An encoder maps a log-mel to a 64-d vector z(x).  The codebook holds 25 rows,
five per dominant emotion (rows 5k..5k+4 belong to emotion k).  Lookup is by
cosine similarity; the hard code gives the label, the temperature-scaled
softmax over cosines gives the soft posterior used in the cross-entropy.

Training target for a clip of emotion k: the closest of its emotion's five
codes, so intensity levels organise themselves inside each block.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad, stop_gradient
from .corpus import EMOTIONS
from .features import MelNormalizer, batch_frames
from .nn import Conv1d, Linear, Module, TransformerBlock, param, sinusoidal_positions
from .optim import Adam

log = logging.getLogger(__name__)

N_EMOTIONS = len(EMOTIONS)
CODES_PER_EMOTION = 5


@dataclass
class ClassifierConfig:
    n_mels: int = 80
    channels: int = 64
    kernel_size: int = 5
    n_blocks: int = 2
    ff_dim: int = 128
    embed_dim: int = 64
    n_codes: int = 25
    temperature: float = 0.1
    alpha: float = 0.01
    beta: float = 0.25
    use_vq: bool = True
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_codes != N_EMOTIONS * CODES_PER_EMOTION:
            raise ValueError(f"codebook must have {N_EMOTIONS * CODES_PER_EMOTION} rows")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class EmotionPosterior:
    hard_index: int
    soft: np.ndarray
    embedding: np.ndarray
    encoder_output: np.ndarray

    @property
    def label(self) -> int:
        return int(DOMINANT[self.hard_index])


DOMINANT = np.repeat(np.arange(N_EMOTIONS), CODES_PER_EMOTION)


def unit_sphere_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class VQClassifier(Module):
    def __init__(self, cfg: ClassifierConfig | None = None, dtype=np.float32):
        cfg = cfg or ClassifierConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.conv1 = Conv1d(cfg.n_mels, cfg.channels, cfg.kernel_size, rng, stride=2, dtype=dtype)
        self.conv2 = Conv1d(cfg.channels, cfg.channels, cfg.kernel_size, rng, stride=2, dtype=dtype)
        self.blocks = [TransformerBlock(cfg.channels, cfg.ff_dim, rng, dtype) for _ in range(cfg.n_blocks)]
        self.proj = Linear(cfg.channels, cfg.embed_dim, rng, dtype)
        if cfg.use_vq:
            self.codebook = param(unit_sphere_rows(rng, cfg.n_codes, cfg.embed_dim).astype(dtype))
        else:
            self.head = Linear(cfg.embed_dim, N_EMOTIONS, rng, dtype)
        self.norm = MelNormalizer()
        self.trained = False

    @property
    def dtype(self):
        return self.proj.weight.dtype

    def encode_batch(self, x) -> Tensor:
        """(B, T, n_mels) normalised log-mels -> (B, embed_dim)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        h = ad.gelu(self.conv1(x))
        h = ad.gelu(self.conv2(h))
        h = h + sinusoidal_positions(h.shape[1], h.shape[2], h.dtype)
        for blk in self.blocks:
            h = blk(h)
        return self.proj(h.mean(axis=1))

    def cosine_logits(self, z: Tensor) -> Tensor:
        cos = ad.matmul(ad.normalize(z), ad.swap_last(ad.normalize(self.codebook)))
        return cos * (1.0 / self.cfg.temperature)

    def prepare(self, mel) -> np.ndarray:
        """Raw log-mel(s) -> normalised (B, T, n_mels) batch."""
        frames = getattr(mel, "frames", mel)
        if isinstance(frames, (list, tuple)):
            frames = batch_frames([getattr(m, "frames", m) for m in frames], self.dtype)
        frames = np.asarray(frames)
        if frames.ndim == 2:
            frames = frames[None]
        return self.norm(frames).astype(self.dtype)


# -- lookup ------------------------------------------------------------------
def cosine_scores(codebook: np.ndarray, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    E = np.asarray(codebook, dtype=np.float64)
    zn = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(zn == 0):
        raise ValueError("cosine similarity is undefined for a zero vector")
    return (z / zn) @ (E / np.linalg.norm(E, axis=1, keepdims=True)).T


def quantize(codebook: np.ndarray, z: np.ndarray, temperature: float = 0.1) -> EmotionPosterior:
    """Nearest codebook row by cosine (lowest index wins ties) and soft posterior."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("encoder output is not finite")
    s = cosine_scores(codebook, z)
    k = int(np.argmax(s))
    logits = s / temperature
    p = np.exp(logits - logits.max())
    p /= p.sum()
    return EmotionPosterior(k, p, np.asarray(codebook)[k].copy(), z)


def straight_through(z: Tensor, e: Tensor) -> Tensor:
    """Value of ``e``, gradient of identity w.r.t. ``z``."""
    return z + stop_gradient(e - z)


def block_targets(codebook: np.ndarray, z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """For each row, the closest code among the five assigned to its label."""
    s = cosine_scores(codebook, z).reshape(len(z), N_EMOTIONS, CODES_PER_EMOTION)
    labels = np.asarray(labels, dtype=int)
    within = np.argmax(s[np.arange(len(z)), labels], axis=1)
    return labels * CODES_PER_EMOTION + within


# -- loss --------------------------------------------------------------------
def code_cross_entropy(logq: Tensor, targets: np.ndarray) -> Tensor:
    """-(1/n_codes) log q~[target], batch mean; ``logq`` is (B, n_codes)."""
    rows = np.arange(logq.shape[0])
    return logq[rows, np.asarray(targets, dtype=int)].mean() * (-1.0 / logq.shape[1])


def commitment_loss(z: Tensor, e: Tensor, beta: float) -> Tensor:
    """||sg[z] - e||^2 + beta ||z - sg[e]||^2 per row, batch mean."""
    return (((stop_gradient(z) - e) ** 2).sum(axis=1)
            + beta * ((z - stop_gradient(e)) ** 2).sum(axis=1)).mean()


def loss_on_batch(model: VQClassifier, x: np.ndarray, labels: np.ndarray) -> tuple[Tensor, dict]:
    """L_vq on a normalised batch, averaged over the batch."""
    labels = np.asarray(labels, dtype=int)
    B = len(labels)
    z = model.encode_batch(x)
    rows = np.arange(B)
    if not model.cfg.use_vq:
        logits = model.head(z)
        ce = -ad.log_softmax(logits)[rows, labels].mean()
        pred = np.argmax(logits.data, axis=1)
        zero = Tensor(np.zeros((), dtype=z.dtype))
        return ce, {"ce": ce, "cl": zero, "z": z, "pred": pred, "hard": None, "targets": None}
    cfg = model.cfg
    targets = block_targets(model.codebook.data, z.data, labels)
    logq = ad.log_softmax(model.cosine_logits(z))
    ce = code_cross_entropy(logq, targets)
    e = model.codebook[targets]
    cl = commitment_loss(z, e, cfg.beta)
    total = ce + cfg.alpha * cl
    hard = np.argmax(logq.data, axis=1)
    return total, {"ce": ce, "cl": cl, "z": z, "pred": DOMINANT[hard], "hard": hard,
                   "targets": targets, "embedding": straight_through(z, e)}


def classifier_loss(model: VQClassifier, mel, label) -> tuple[Tensor, dict]:
    """L_vq = L_ce + alpha * L_cl for one log-mel (or a batch) and label(s)."""
    labels = np.atleast_1d(np.asarray(label, dtype=int))
    return loss_on_batch(model, model.prepare(mel), labels)


# -- inference -----------------------------------------------------------------
def encode(model: VQClassifier, mel) -> np.ndarray:
    with no_grad():
        z = model.encode_batch(model.prepare(mel)).data
    return z[0] if z.shape[0] == 1 and np.ndim(getattr(mel, "frames", mel)) == 2 else z


def encode_many(model: VQClassifier, mels: list[np.ndarray], batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(mels), batch_size):
        out.append(encode(model, mels[i:i + batch_size]).reshape(-1, model.cfg.embed_dim))
    return np.concatenate(out) if out else np.zeros((0, model.cfg.embed_dim))


def predict_labels(model: VQClassifier, z: np.ndarray) -> np.ndarray:
    if model.cfg.use_vq:
        return DOMINANT[np.argmax(cosine_scores(model.codebook.data, z), axis=1)]
    with no_grad():
        return np.argmax(model.head(Tensor(z.astype(model.dtype))).data, axis=1)


def classify(model: VQClassifier, mel) -> tuple[int, EmotionPosterior | None]:
    """Dominant emotion of one clip; the posterior is None for the non-VQ ablation."""
    z = encode(model, mel).reshape(-1)
    if not model.cfg.use_vq:
        return int(predict_labels(model, z[None])[0]), None
    post = quantize(model.codebook.data, z, model.cfg.temperature)
    return post.label, post


def utilization_from_levels(labels: np.ndarray, levels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """5x5 percentages: row = emotion, column = within-block code Q1..Q5."""
    counts = np.zeros((N_EMOTIONS, CODES_PER_EMOTION))
    for lab, lev in zip(labels, levels):
        counts[int(lab), int(lev)] += 1
    n = counts.sum(axis=1)
    pct = np.divide(counts * 100.0, n[:, None], out=np.zeros_like(counts), where=n[:, None] > 0)
    return pct, n.astype(int)


def codebook_utilization(model: VQClassifier, mels: list[np.ndarray], labels) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of each emotion's clips over that emotion's five codes.

    The code of a clip is the nearest of the five rows owned by its labelled
    emotion.  Rows with no clips are all zero; the second return value holds
    the per-row clip counts so callers can flag them.
    """
    if not model.cfg.use_vq:
        raise ValueError("codebook utilisation needs a VQ classifier")
    labels = np.asarray(labels, dtype=int)
    z = encode_many(model, mels)
    levels = block_targets(model.codebook.data, z, labels) % CODES_PER_EMOTION
    return utilization_from_levels(labels, levels)


# -- training ------------------------------------------------------------------
def train_classifier(model: VQClassifier, train_mels: list[np.ndarray], train_labels,
                     val_mels: list[np.ndarray] | None = None, val_labels=None,
                     epochs: int | None = None, seed: int | None = None,
                     progress=None) -> list[dict]:
    """Minibatch Adam on L_vq (or plain 5-way cross-entropy when ``use_vq`` is off).

    The mel normaliser is fitted on the training mels.  Returns one history
    row per epoch: running train loss/accuracy and held-out val loss/accuracy.
    """
    if not train_mels:
        raise ValueError("training corpus is empty")
    cfg = model.cfg
    epochs = cfg.epochs if epochs is None else epochs
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    train_labels = np.asarray(train_labels, dtype=int)
    model.norm = MelNormalizer.fit(train_mels)
    xs = [model.norm(m).astype(model.dtype) for m in train_mels]
    vx = [model.norm(m).astype(model.dtype) for m in val_mels] if val_mels else []
    vy = np.asarray(val_labels, dtype=int) if val_mels else None
    opt = Adam(model.parameters(), lr=cfg.lr)
    history = []
    n = len(xs)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        tot_loss = tot_ce = tot_cl = 0.0
        correct = 0
        for i in range(0, n, cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            xb = batch_frames([xs[j] for j in idx], model.dtype)
            yb = train_labels[idx]
            opt.zero_grad()
            loss, parts = loss_on_batch(model, xb, yb)
            loss.backward()
            opt.step()
            tot_loss += loss.item() * len(idx)
            tot_ce += parts["ce"].item() * len(idx)
            tot_cl += parts["cl"].item() * len(idx)
            correct += int(np.sum(parts["pred"] == yb))
        row = {"epoch": epoch, "train_loss": tot_loss / n, "train_acc": correct / n,
               "ce": tot_ce / n, "cl": tot_cl / n}
        row["val_loss"], row["val_acc"] = evaluate_loss(model, vx, vy) if vx else (float("nan"), float("nan"))
        history.append(row)
        log.info("classifier epoch %d: %s", epoch, row)
        if progress:
            progress(row)
    model.trained = True
    return history


def evaluate_loss(model: VQClassifier, xs: list[np.ndarray], labels, batch_size: int = 64) -> tuple[float, float]:
    """Mean loss and accuracy on already-normalised mels, no gradients."""
    labels = np.asarray(labels, dtype=int)
    tot = 0.0
    correct = 0
    with no_grad():
        for i in range(0, len(xs), batch_size):
            xb = batch_frames(xs[i:i + batch_size], model.dtype)
            yb = labels[i:i + batch_size]
            loss, parts = loss_on_batch(model, xb, yb)
            tot += loss.item() * len(yb)
            correct += int(np.sum(parts["pred"] == yb))
    return tot / len(xs), correct / len(xs)


def accuracy(model: VQClassifier, mels: list[np.ndarray], labels) -> float:
    pred = predict_labels(model, encode_many(model, mels))
    return float(np.mean(pred == np.asarray(labels)))


def config_dict(model: VQClassifier) -> dict:
    return asdict(model.cfg)
