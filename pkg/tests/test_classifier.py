import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from affectecho.audio import mel_spectrogram
from affectecho.autodiff import Tensor, grad_check, log_softmax
from affectecho.classifier import (DOMINANT, ClassifierConfig, VQClassifier, block_targets, classifier_loss,
                                   classify, code_cross_entropy, codebook_utilization, commitment_loss,
                                   cosine_scores, encode, loss_on_batch, quantize, straight_through,
                                   train_classifier, unit_sphere_rows, utilization_from_levels)
from affectecho.corpus import DEFAULT_PROFILES, EMOTIONS, synth_clip
from affectecho.features import MelNormalizer

TINY = dict(n_mels=6, channels=4, kernel_size=3, n_blocks=1, ff_dim=8, embed_dim=6)


@pytest.fixture(scope="module")
def codebook():
    return unit_sphere_rows(np.random.default_rng(7), 25, 64)


def test_dominant_layout():
    assert DOMINANT.tolist() == [k for k in range(5) for _ in range(5)]


def test_codebook_shape_and_nonzero_rows():
    m = VQClassifier()
    assert m.codebook.shape == (25, 64)
    assert np.all(np.linalg.norm(m.codebook.data, axis=1) > 0)
    with pytest.raises(ValueError):
        ClassifierConfig(n_codes=20)


def test_quantize_idempotent_on_every_row(codebook):
    for i in range(25):
        post = quantize(codebook, codebook[i])
        assert post.hard_index == i
        np.testing.assert_array_equal(post.embedding, codebook[i])
        assert post.label == i // 5


def test_posterior_invariants(codebook, rng):
    post = quantize(codebook, rng.standard_normal(64))
    assert abs(post.soft.sum() - 1) < 1e-6
    assert post.hard_index == int(np.argmax(post.soft))


def test_scale_invariance_over_1000_vectors(codebook):
    rng = np.random.default_rng(3)
    for _ in range(1000):
        z = rng.standard_normal(64)
        c = float(np.exp(rng.uniform(-5, 5)))
        a, b = quantize(codebook, z), quantize(codebook, c * z)
        assert a.hard_index == b.hard_index
        np.testing.assert_allclose(a.soft, b.soft, rtol=1e-9, atol=1e-12)


def test_tie_breaks_to_lowest_index(rng):
    cb = unit_sphere_rows(rng, 25, 64)
    cb[17] = cb[4]
    cb[9] = 2.0 * cb[4]       # same direction, different length
    assert quantize(cb, cb[4]).hard_index == 4
    # z equidistant from two orthogonal rows
    cb2 = np.eye(25, 64)
    z = np.zeros(64)
    z[[3, 12]] = 1.0
    assert quantize(cb2, z).hard_index == 3


def test_zero_vector_raises(codebook):
    with pytest.raises(ValueError, match="zero"):
        quantize(codebook, np.zeros(64))


def test_brute_force_cosine_scan(rng):
    for _ in range(50):
        cb = unit_sphere_rows(rng, 25, 64)
        z = rng.standard_normal(64)
        best, best_i = -np.inf, -1
        for i in range(25):
            num = sum(z[d] * cb[i, d] for d in range(64))
            den = np.sqrt(sum(v * v for v in z)) * np.sqrt(sum(v * v for v in cb[i]))
            if num / den > best:
                best, best_i = num / den, i
        assert quantize(cb, z).hard_index == best_i


def test_commitment_zero_at_fixpoint(codebook):
    e = Tensor(codebook[[3, 11]])
    assert commitment_loss(Tensor(codebook[[3, 11]]), e, 0.25).item() == 0.0


def test_uniform_posterior_closed_form():
    logq = log_softmax(Tensor(np.zeros((3, 25))))
    ce = code_cross_entropy(logq, [0, 7, 24]).item()
    assert ce == pytest.approx(np.log(25) / 25, rel=1e-12)


def test_identical_rows_give_uniform_posterior_and_zero_commitment():
    row = unit_sphere_rows(np.random.default_rng(0), 1, 64)[0]
    cb = np.tile(row, (25, 1))
    post = quantize(cb, row)
    np.testing.assert_allclose(post.soft, 1 / 25)
    logq = np.log(post.soft)[None]
    assert code_cross_entropy(Tensor(logq), [post.hard_index]).item() == pytest.approx(np.log(25) / 25)
    assert commitment_loss(Tensor(row[None]), Tensor(row[None]), 0.25).item() == 0.0


def test_beta_term_hand_check(rng):
    e0 = rng.standard_normal((1, 8))
    delta = 0.1 * rng.standard_normal((1, 8))
    z = Tensor(e0 + delta, requires_grad=True)
    e = Tensor(e0.copy(), requires_grad=True)
    loss = commitment_loss(z, e, 0.25)
    assert loss.item() == pytest.approx(1.25 * np.sum(delta ** 2), rel=1e-12)
    loss.backward()
    # codebook term pulls e toward sg[z]; commitment term pulls z toward sg[e] with weight beta
    np.testing.assert_allclose(e.grad, -2 * delta, rtol=1e-12)
    np.testing.assert_allclose(z.grad, 2 * 0.25 * delta, rtol=1e-12)


def test_straight_through_two_parameter_example():
    z = Tensor(np.array([[0.3, -1.2]]), requires_grad=True)
    e = Tensor(np.array([[1.0, 0.5]]), requires_grad=True)
    c = np.array([[2.0, -3.0]])
    out = straight_through(z, e)
    np.testing.assert_array_equal(out.data, e.data)
    (out * c).sum().backward()
    np.testing.assert_array_equal(z.grad, c)      # as if e were z
    assert e.grad is None or np.all(e.grad == 0)


def test_block_targets_stay_in_label_block(rng):
    cb = unit_sphere_rows(rng, 25, 64)
    z = rng.standard_normal((200, 64))
    labels = rng.integers(0, 5, 200)
    t = block_targets(cb, z, labels)
    assert np.all(t // 5 == labels)
    s = cosine_scores(cb, z)
    for i in range(200):
        blk = s[i, labels[i] * 5:labels[i] * 5 + 5]
        assert t[i] == labels[i] * 5 + int(np.argmax(blk))


def _tiny(use_vq=True, seed=0):
    return VQClassifier(ClassifierConfig(**TINY, use_vq=use_vq, seed=seed), dtype=np.float64)


def test_full_loss_grad_check_on_four_frames(rng):
    m = _tiny()
    x = rng.standard_normal((2, 4, 6))
    labels = np.array([1, 3])

    def f():
        return loss_on_batch(m, x, labels)[0]
    assert grad_check(f, m.parameters(), max_coords=12) < 1e-3


def test_non_vq_loss_grad_check(rng):
    m = _tiny(use_vq=False)
    x = rng.standard_normal((2, 4, 6))
    assert grad_check(lambda: loss_on_batch(m, x, [0, 4])[0], m.parameters(), max_coords=12) < 1e-3


def test_encode_is_deterministic_and_finite(rng):
    m = VQClassifier()
    mel = rng.standard_normal((40, 80))
    a, b = encode(m, mel), encode(m, mel)
    assert a.shape == (64,)
    assert a.tobytes() == b.tobytes()
    assert np.all(np.isfinite(a))


def test_time_crop_stability():
    m = VQClassifier()
    for i, name in enumerate(EMOTIONS):
        mel = mel_spectrogram(synth_clip(DEFAULT_PROFILES[name], 0, i, "A")).frames
        m.norm = MelNormalizer.fit([mel])
        z = encode(m, mel)
        zc = encode(m, mel[: int(0.9 * len(mel))])
        assert np.linalg.norm(zc - z) < 0.5 * np.linalg.norm(z)


def _toy_data(rng, n=30, T=12):
    labels = np.arange(n) % 5
    mels = [rng.standard_normal((T, 6)) + labels[i] for i in range(n)]
    return mels, labels


def test_training_is_deterministic(rng):
    mels, labels = _toy_data(rng)
    h1 = train_classifier(_tiny(), mels[:20], labels[:20], mels[20:], labels[20:], epochs=3)
    h2 = train_classifier(_tiny(), mels[:20], labels[:20], mels[20:], labels[20:], epochs=3)
    assert h1 == h2
    assert list(h1[0]) == ["epoch", "train_loss", "train_acc", "ce", "cl", "val_loss", "val_acc"]


def test_non_vq_history_schema_matches(rng):
    mels, labels = _toy_data(rng)
    h_vq = train_classifier(_tiny(), mels, labels, mels, labels, epochs=1)
    h_no = train_classifier(_tiny(use_vq=False), mels, labels, mels, labels, epochs=1)
    assert list(h_vq[0]) == list(h_no[0])
    assert h_no[0]["cl"] == 0.0


def test_training_rejects_empty():
    with pytest.raises(ValueError, match="empty"):
        train_classifier(_tiny(), [], [])


def test_classify_label_is_dominant_of_hard_index(rng):
    m = _tiny()
    for _ in range(10):
        label, post = classify(m, rng.standard_normal((8, 6)))
        assert label == DOMINANT[post.hard_index]
        assert np.array_equal(post.embedding, m.codebook.data[post.hard_index])


def test_classify_non_vq_has_no_posterior(rng):
    label, post = classify(_tiny(use_vq=False), rng.standard_normal((8, 6)))
    assert post is None and 0 <= label < 5


def test_classifier_loss_accepts_mel(rng):
    m = _tiny()
    loss, parts = classifier_loss(m, rng.standard_normal((8, 6)), 2)
    assert np.isfinite(loss.item()) and parts["targets"][0] // 5 == 2


def test_utilization_hand_count():
    labels = np.array([0, 0, 0, 0, 1, 1, 3, 3, 3, 3])
    levels = np.array([0, 0, 3, 1, 4, 4, 2, 2, 2, 0])
    pct, n = utilization_from_levels(labels, levels)
    expected = np.zeros((5, 5))
    expected[0] = [50, 25, 0, 25, 0]
    expected[1] = [0, 0, 0, 0, 100]
    expected[3] = [25, 0, 75, 0, 0]
    np.testing.assert_allclose(pct, expected)
    assert n.tolist() == [4, 2, 0, 4, 0]


def test_all_clips_on_one_code_gives_100_row(rng):
    m = _tiny()
    # push every Angry clip's target to code 0 by making row 0 the encoder direction
    mels = [rng.standard_normal((8, 6)) for _ in range(6)]
    z = encode(m, mels)
    m.codebook.data[0] = z.mean(axis=0) / np.linalg.norm(z.mean(axis=0))
    m.codebook.data[1:5] = -m.codebook.data[0]
    pct, n = codebook_utilization(m, mels, [0] * 6)
    assert pct[0].tolist() == [100, 0, 0, 0, 0]
    assert n[0] == 6


@given(st.integers(0, 10 ** 6))
def test_utilization_rows_sum_to_100(seed):
    r = np.random.default_rng(seed)
    labels = r.integers(0, 5, 40)
    pct, n = utilization_from_levels(labels, r.integers(0, 5, 40))
    for k in range(5):
        assert abs(pct[k].sum() - (100 if n[k] else 0)) < 1e-9
