import logging
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from affectecho.audio import AudioClip, extract_f0, save_wav
from affectecho.corpus import (DEFAULT_PROFILES, EMOTIONS, CorpusIndex, EmotionProfile, build_synthetic_corpus,
                               emotion_index, load_esd_layout, open_corpus, synth_clip)


@pytest.fixture(scope="module")
def corpus20(tmp_path_factory):
    return build_synthetic_corpus(tmp_path_factory.mktemp("c20"), n_per_emotion=20, speakers=2,
                                  languages=2, seed=0)


def test_counts(corpus20):
    emo = corpus20.select(role="emotional")
    neu = corpus20.select(role="neutral")
    assert len(emo) == 5 * 20 * 2 * 2 == 400
    assert len(neu) == 400
    assert Counter(e.emotion for e in emo) == {k: 80 for k in EMOTIONS}
    assert corpus20.languages() == ["A", "B"]


def test_splits_70_20_10_by_utterance(corpus20):
    uid_split = {}
    for e in corpus20:
        assert uid_split.setdefault(e.utterance_id, e.split) == e.split   # never straddles
    c = Counter(uid_split.values())
    assert (c["train"], c["val"], c["test"]) == (280, 80, 40)
    for emo in EMOTIONS:
        per = Counter(e.split for e in corpus20.select(emotion=emo))
        assert abs(per["train"] - 56) <= 1 and abs(per["val"] - 16) <= 1 and abs(per["test"] - 8) <= 1


def test_neutral_twin_lookup(corpus20):
    for e in corpus20.select(split="test")[:20]:
        n = corpus20.neutral_for(e)
        assert n.role == "neutral" and n.speaker == e.speaker and n.utterance_id == e.utterance_id


def test_index_round_trip(corpus20, tmp_path):
    p = tmp_path / "index.jsonl"
    corpus20.to_jsonl(p)
    back = CorpusIndex.from_jsonl(p, corpus20.root)
    assert back.entries == corpus20.entries
    assert open_corpus(corpus20.root).entries == corpus20.entries


def test_build_is_deterministic(tmp_path):
    a = build_synthetic_corpus(tmp_path / "a", 2, 1, 2, seed=3)
    b = build_synthetic_corpus(tmp_path / "b", 2, 1, 2, seed=3)
    assert (tmp_path / "a/index.jsonl").read_bytes() == (tmp_path / "b/index.jsonl").read_bytes()
    for ea, eb in zip(a, b):
        assert a.clip_path(ea).read_bytes() == b.clip_path(eb).read_bytes()


def test_synth_clip_is_deterministic():
    p = DEFAULT_PROFILES["Happy"]
    a, b = synth_clip(p, 4, 9, "B"), synth_clip(p, 4, 9, "B")
    assert a.samples.tobytes() == b.samples.tobytes()


def test_angry_louder_than_sad():
    for u in range(5):
        ang = synth_clip(DEFAULT_PROFILES["Angry"], 0, u, "A")
        sad = synth_clip(DEFAULT_PROFILES["Sad"], 0, u, "A")
        assert np.sqrt(np.mean(ang.samples ** 2)) > np.sqrt(np.mean(sad.samples ** 2))


def test_flat_220_round_trip():
    # language A has no lexical tones, so a flat profile stays at its mean
    p = EmotionProfile(220.0, 0.0, 0.6, 4.0, 0.0, "flat")
    for u in range(4):
        c = extract_f0(synth_clip(p, 0, u, "A"))
        assert abs(np.mean(c.f0[c.voiced]) - 220) <= 5


def test_profiles_pairwise_separable():
    keys = list(DEFAULT_PROFILES)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            pa, pb = DEFAULT_PROFILES[a], DEFAULT_PROFILES[b]
            va = np.array([pa.f0_mean, pa.energy, pa.rate])
            vb = np.array([pb.f0_mean, pb.energy, pb.rate])
            assert np.max(np.abs(va - vb) / np.maximum(va, vb)) > 0.1


def test_profile_validation():
    with pytest.raises(ValueError):
        EmotionProfile(0.0, 10, 1, 4, 0.0)
    with pytest.raises(ValueError):
        EmotionProfile(100.0, 10, 1, 4, 0.2)
    with pytest.raises(ValueError):
        replace(DEFAULT_PROFILES["Sad"], contour_shape="zigzag")


def test_bad_build_arguments(tmp_path):
    with pytest.raises(ValueError):
        build_synthetic_corpus(tmp_path, 0)


def test_emotion_name_normalisation():
    assert emotion_index("Surprise") == emotion_index("Surprised") == 4
    assert emotion_index("angry") == 0
    with pytest.raises(ValueError):
        emotion_index("Fear")


def _esd_tree(root, speakers=("0001", "0012"), n=3):
    folders = ["Angry", "Happy", "Neutral", "Sad", "Surprise"]
    clip = AudioClip(0.1 * np.sin(np.arange(3000) / 10.0), 16000)
    for s in speakers:
        for k, f in enumerate(folders):
            d = root / s / f
            d.mkdir(parents=True)
            for i in range(n):
                save_wav(clip, d / f"{s}_{k * 350 + i + 1:06d}.wav")
    return root


def test_esd_layout(tmp_path):
    idx = load_esd_layout(_esd_tree(tmp_path))
    assert len(idx) == 30
    assert {e.emotion for e in idx} == set(EMOTIONS)
    assert {e.language for e in idx} == {"zh", "en"}
    assert [e.language for e in idx if e.speaker == "0001"][0] == "zh"
    # same sentence across emotions shares one content id
    ids = {e.utterance_id for e in idx if e.speaker == "0001"}
    assert ids == {"0001-0", "0001-1", "0001-2"}
    n = idx.neutral_for(idx.select(emotion="Angry")[0])
    assert n.emotion == "Neutral"


@pytest.mark.filterwarnings("ignore::scipy.io.wavfile.WavFileWarning")
def test_esd_surprised_folder_and_malformed_wav(tmp_path, caplog):
    root = _esd_tree(tmp_path, speakers=("0015",))
    (root / "0015" / "Surprise").rename(root / "0015" / "Surprised")
    (root / "0015" / "Sad" / "broken.wav").write_bytes(b"RIFF....WAVEjunk")
    with caplog.at_level(logging.WARNING):
        idx = load_esd_layout(root)
    assert len(idx) == 15
    assert sum(e.emotion == "Surprised" for e in idx) == 3
    assert any("broken.wav" in r.getMessage() for r in caplog.records)


def test_esd_missing_emotion_warns(tmp_path, caplog):
    root = _esd_tree(tmp_path, speakers=("0003",))
    for f in (root / "0003" / "Sad").iterdir():
        f.unlink()
    (root / "0003" / "Sad").rmdir()
    with caplog.at_level(logging.WARNING):
        idx = load_esd_layout(root)
    assert len(idx) == 12
    assert any("Sad" in r.getMessage() for r in caplog.records)


def test_esd_empty_tree(tmp_path):
    with pytest.raises(ValueError, match="no usable clips"):
        load_esd_layout(tmp_path)
