import itertools
import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialogsent.corpus import (
    SWITCHBOARD_RATIOS,
    Corpus,
    GeneratorConfig,
    SentimentLabel,
    Utterance,
    filter_nonverbal,
    generate_synthetic_corpus,
    load_manifest,
    map_iemocap_label,
    resolve_majority_label,
    save_manifest,
)
from dialogsent.errors import InputError, ManifestError

TAGS = ["negative", "positive", "neutral"]


def test_label_codes_are_fixed():
    assert [int(x) for x in SentimentLabel] == [0, 1, 2]
    assert SentimentLabel.NEGATIVE.tag == "negative"


@pytest.mark.parametrize("votes, expected", [
    (["positive", "positive", "negative"], SentimentLabel.POSITIVE),
    (["positive", "negative", "neutral"], None),
    (["positive", "positive", "negative", "negative"], None),
    ([" Neutral", "NEUTRAL"], SentimentLabel.NEUTRAL),
])
def test_resolve_majority_label(votes, expected):
    assert resolve_majority_label(votes) == expected


def test_resolve_rejects_unknown_vote():
    with pytest.raises(InputError, match="angry"):
        resolve_majority_label(["positive", "angry"])


def test_resolve_rejects_empty():
    with pytest.raises(InputError):
        resolve_majority_label([])


def test_strict_majority_exhaustive():
    for size in range(1, 8):
        for combo in itertools.combinations_with_replacement(TAGS, size):
            counts = Counter(combo)
            winners = [t for t, n in counts.items() if n > size / 2]
            got = resolve_majority_label(list(combo))
            if winners:
                assert got == SentimentLabel.parse(winners[0])
            else:
                assert got is None


@pytest.mark.parametrize("tag, expected", [
    ("excited", SentimentLabel.POSITIVE),
    ("happy", SentimentLabel.POSITIVE),
    ("sad", SentimentLabel.NEGATIVE),
    ("angry", SentimentLabel.NEGATIVE),
    ("neutral", SentimentLabel.NEUTRAL),
    ("frustrated", None),
    ("surprised", None),
])
def test_map_iemocap_label(tag, expected):
    assert map_iemocap_label(tag) == expected


def _utt(tokens):
    return Utterance("u", "d", np.zeros(10), 16000, tuple(tokens))


@pytest.mark.parametrize("tokens, keep", [
    (["[laughter]"], False),
    (["[laughter]", "[breathing]"], False),
    (["[laughter]", "that", "is", "great"], True),
    ([], False),
])
def test_filter_nonverbal(tokens, keep):
    assert filter_nonverbal(_utt(tokens)) is keep


def test_class_counts_recount(small_corpus):
    recount = Counter(u.label for u in small_corpus if u.label is not None)
    assert dict(small_corpus.class_counts) == {lab: recount.get(lab, 0) for lab in SentimentLabel}
    filtered = small_corpus.filter(lambda u: u.label != SentimentLabel.NEUTRAL)
    assert filtered.class_counts[SentimentLabel.NEUTRAL] == 0
    assert filtered.class_counts[SentimentLabel.POSITIVE] == small_corpus.class_counts[SentimentLabel.POSITIVE]


def test_duplicate_ids_rejected():
    u = _utt(["a"])
    with pytest.raises(InputError, match="duplicate"):
        Corpus("c", (u, u))


def test_utterance_validation():
    with pytest.raises(InputError):
        Utterance("u", "", np.zeros(3), 16000)
    with pytest.raises(InputError):
        Utterance("u", "d", np.zeros(3), 0)


def test_default_ratios_sum_to_one():
    assert abs(sum(SWITCHBOARD_RATIOS) - 1) < 1e-12
    assert [round(r, 3) for r in SWITCHBOARD_RATIOS] == [0.173, 0.310, 0.516]


def test_generator_counts_follow_ratios():
    cfg = GeneratorConfig(seed=11, num_dialogs=37, utterances_per_dialog=(2, 9), duration_range=(0.05, 0.06))
    c = generate_synthetic_corpus(cfg)
    total = len(c)
    for lab, ratio in zip(SentimentLabel, cfg.class_ratios):
        assert abs(c.class_counts[lab] - ratio * total) <= 1


def test_generator_deterministic(tmp_path):
    cfg = GeneratorConfig(seed=5, num_dialogs=4, utterances_per_dialog=(2, 3), duration_range=(0.05, 0.1))
    a, b = generate_synthetic_corpus(cfg), generate_synthetic_corpus(cfg)
    assert a == b
    pa = save_manifest(a, tmp_path / "a")
    pb = save_manifest(b, tmp_path / "b")
    assert pa.read_bytes() == pb.read_bytes()
    for u in a:
        assert (tmp_path / "a" / "audio" / f"{u.id}.wav").read_bytes() == \
            (tmp_path / "b" / "audio" / f"{u.id}.wav").read_bytes()


def test_generator_degenerate_ratio():
    cfg = GeneratorConfig(seed=1, num_dialogs=5, utterances_per_dialog=(2, 2), class_ratios=(1, 0, 0),
                          duration_range=(0.05, 0.05))
    c = generate_synthetic_corpus(cfg)
    assert all(u.label == SentimentLabel.NEGATIVE for u in c)


def test_generator_votes_resolve_to_label(small_corpus):
    for u in small_corpus:
        assert resolve_majority_label(u.votes) == u.label
        assert np.all(np.abs(u.samples) <= 1.0)


def test_generator_labels_vary_within_dialogs(small_corpus):
    mixed = [d for d, us in small_corpus.dialogs().items() if len({u.label for u in us}) > 1]
    assert mixed


@pytest.mark.parametrize("bad", [
    {"class_ratios": (0.5, 0.5, 0.1)},
    {"class_ratios": (1.2, -0.2, 0.0)},
    {"num_dialogs": 0},
    {"utterances_per_dialog": (3, 2)},
    {"shared_filler_fraction": 1.5},
    {"duration_range": (0.001, 0.01)},
])
def test_generator_config_rejects(bad):
    with pytest.raises(InputError):
        GeneratorConfig(**bad)


def test_generator_config_json_roundtrip():
    cfg = GeneratorConfig(seed=9, num_dialogs=3)
    data = json.loads(cfg.to_json())
    assert set(data) == {"seed", "num_dialogs", "utterances_per_dialog", "class_ratios", "sample_rate",
                         "duration_range", "vocab_size_per_class", "shared_filler_fraction", "snr_db"}
    assert GeneratorConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(InputError):
        GeneratorConfig.from_dict({"seeds": 1})


def _zero_crossing_f0(x, sr):
    # each period of the fundamental crosses zero twice upward+downward
    s = np.signbit(x)
    return np.count_nonzero(s[1:] != s[:-1]) / 2 / (len(x) / sr)


def _autocorr_f0(x, sr, fmin=80, fmax=500):
    x = x - x.mean()
    ac = np.correlate(x, x, mode="full")[len(x) - 1:]
    lo, hi = int(sr / fmax), int(sr / fmin)
    return sr / (lo + np.argmax(ac[lo:hi]))


def test_generator_pitch_ordering():
    cfg = GeneratorConfig(seed=2, num_dialogs=6, utterances_per_dialog=(5, 5), class_ratios=(1 / 3, 1 / 3, 1 / 3),
                          duration_range=(0.3, 0.4))
    c = generate_synthetic_corpus(cfg)
    means = {}
    for lab in SentimentLabel:
        means[lab] = np.mean([_autocorr_f0(u.samples, u.sample_rate) for u in c if u.label == lab])
    assert means[SentimentLabel.NEGATIVE] < means[SentimentLabel.NEUTRAL] < means[SentimentLabel.POSITIVE]


def test_manifest_roundtrip(small_corpus, tmp_path):
    path = save_manifest(small_corpus, tmp_path)
    assert path.name == "small.csv"
    loaded = load_manifest(path)
    assert loaded == small_corpus
    assert loaded.class_counts == small_corpus.class_counts


def test_manifest_unlabeled_and_audio_free(tmp_path):
    c = Corpus("mixed", (
        Utterance("a", "d1", np.zeros(0), 8000, ("hi",), ("positive", "negative")),
        Utterance("b", "d1", np.array([16384 / 32767, -1.0, 1.0]), 8000, ("[laughter]",), (), SentimentLabel.POSITIVE),
    ))
    assert load_manifest(save_manifest(c, tmp_path)) == c


def test_manifest_missing_wave(small_corpus, tmp_path):
    path = save_manifest(small_corpus, tmp_path)
    victim = small_corpus.utterances[2]
    (tmp_path / "audio" / f"{victim.id}.wav").unlink()
    with pytest.raises(ManifestError, match=f"{victim.id}.wav"):
        load_manifest(path)


def test_manifest_malformed_row(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,dialog_id,audio_path,sample_rate,transcript,votes,label\nx,d,,notanint,,,\n")
    with pytest.raises(ManifestError, match="x"):
        load_manifest(path)
    path.write_text("id,dialog_id,audio_path,sample_rate,transcript,votes,label\nx,d\n")
    with pytest.raises(ManifestError, match=":2"):
        load_manifest(path)


def test_manifest_missing_file(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "nope.csv")


def test_empty_manifest(tmp_path):
    path = save_manifest(Corpus("empty"), tmp_path)
    c = load_manifest(path)
    assert len(c) == 0
    assert all(v == 0 for v in c.class_counts.values())
    (tmp_path / "zero.csv").write_text("")
    assert len(load_manifest(tmp_path / "zero.csv")) == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(TAGS), min_size=1, max_size=9))
def test_majority_property(votes):
    got = resolve_majority_label(votes)
    counts = Counter(votes)
    if got is None:
        assert max(counts.values()) * 2 <= len(votes)
    else:
        assert counts[got.tag] * 2 > len(votes)


def _high_band_fraction(x, sr):
    # harmonics stop at 4 kHz, so energy above 4.5 kHz is noise
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / sr)
    return power[freqs > 4500].sum() / power.sum()


def test_snr_controls_noise_level():
    fractions = []
    for snr in (0.0, 10.0, 30.0):
        c = generate_synthetic_corpus(GeneratorConfig(seed=2, num_dialogs=2, snr_db=snr, duration_range=(0.5, 0.5)))
        fractions.append(np.mean([_high_band_fraction(u.samples, u.sample_rate) for u in c]))
    assert fractions[0] > fractions[1] > fractions[2]
    with pytest.raises(InputError):
        GeneratorConfig(snr_db=float("nan"))
