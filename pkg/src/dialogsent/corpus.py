"""Utterance / dialog data model, label resolution, manifests and the synthetic corpus.

Audio lives in memory as float64 samples in [-1, 1] that sit exactly on the
PCM16 grid (``q / 32767``), so a manifest round trip through 16-bit wave
files is lossless.
"""

from __future__ import annotations

import csv
import enum
import json
import re
import wave
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import InputError, ManifestError

PCM_SCALE = 32767
_MARKER = re.compile(r"^\[[^\[\]\s]+\]$")

# 8549 negative, 15308 positive, 25445 neutral majority-voted SWITCHBOARD turns.
SWITCHBOARD_COUNTS = (8549, 15308, 25445)
SWITCHBOARD_RATIOS = tuple(c / sum(SWITCHBOARD_COUNTS) for c in SWITCHBOARD_COUNTS)

MANIFEST_COLUMNS = ["id", "dialog_id", "audio_path", "sample_rate", "transcript", "votes", "label"]


class SentimentLabel(enum.IntEnum):
    NEGATIVE = 0
    POSITIVE = 1
    NEUTRAL = 2

    @classmethod
    def parse(cls, text: str) -> "SentimentLabel":
        key = text.strip().lower()
        for member in cls:
            if member.name.lower() == key:
                return member
        raise InputError(f"unknown sentiment label {text!r}")

    @property
    def tag(self) -> str:
        return self.name.lower()


NUM_CLASSES = len(SentimentLabel)


def _freeze(samples) -> np.ndarray:
    arr = np.array(samples, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Utterance:
    id: str
    dialog_id: str
    samples: np.ndarray
    sample_rate: int
    transcript: tuple[str, ...] = ()
    votes: tuple[str, ...] = ()
    label: Optional[SentimentLabel] = None

    def __post_init__(self):
        if not self.id:
            raise InputError("utterance id must be non-empty")
        if not self.dialog_id:
            raise InputError(f"utterance {self.id}: dialog_id must be non-empty")
        if int(self.sample_rate) <= 0:
            raise InputError(f"utterance {self.id}: sample_rate must be positive")
        object.__setattr__(self, "samples", _freeze(self.samples))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "transcript", tuple(self.transcript))
        object.__setattr__(self, "votes", tuple(self.votes))
        if self.label is not None:
            object.__setattr__(self, "label", SentimentLabel(self.label))

    def __eq__(self, other):
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.id == other.id
            and self.dialog_id == other.dialog_id
            and self.sample_rate == other.sample_rate
            and self.transcript == other.transcript
            and self.votes == other.votes
            and self.label == other.label
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Corpus:
    name: str
    utterances: tuple[Utterance, ...] = ()
    class_counts: Mapping[SentimentLabel, int] = field(init=False)

    def __post_init__(self):
        utts = tuple(self.utterances)
        object.__setattr__(self, "utterances", utts)
        dupes = [k for k, n in Counter(u.id for u in utts).items() if n > 1]
        if dupes:
            raise InputError(f"duplicate utterance ids: {sorted(dupes)[:5]}")
        counts = {lab: 0 for lab in SentimentLabel}
        for u in utts:
            if u.label is not None:
                counts[u.label] += 1
        object.__setattr__(self, "class_counts", counts)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return self.name == other.name and self.utterances == other.utterances

    __hash__ = None

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def labeled(self) -> list[Utterance]:
        return [u for u in self.utterances if u.label is not None]

    def by_id(self) -> dict[str, Utterance]:
        return {u.id: u for u in self.utterances}

    def dialogs(self) -> dict[str, list[Utterance]]:
        out: dict[str, list[Utterance]] = {}
        for u in self.utterances:
            out.setdefault(u.dialog_id, []).append(u)
        return out

    def filter(self, keep) -> "Corpus":
        return Corpus(self.name, tuple(u for u in self.utterances if keep(u)))


# -- labels -------------------------------------------------------------------

def resolve_majority_label(votes: Sequence[str]) -> Optional[SentimentLabel]:
    """Label voted by a strict majority of annotators, or None.

    Even splits and plurality-only outcomes resolve to None; such
    utterances are discarded.
    """
    if not votes:
        raise InputError("no annotator votes")
    parsed = [SentimentLabel.parse(v) for v in votes]
    label, count = Counter(parsed).most_common(1)[0]
    if 2 * count > len(parsed):
        return label
    return None


_IEMOCAP_MAP = {
    "happy": SentimentLabel.POSITIVE,
    "hap": SentimentLabel.POSITIVE,
    "excited": SentimentLabel.POSITIVE,
    "exc": SentimentLabel.POSITIVE,
    "angry": SentimentLabel.NEGATIVE,
    "ang": SentimentLabel.NEGATIVE,
    "sad": SentimentLabel.NEGATIVE,
    "neutral": SentimentLabel.NEUTRAL,
    "neu": SentimentLabel.NEUTRAL,
}


def map_iemocap_label(raw_emotion: str) -> Optional[SentimentLabel]:
    """Three-class IEMOCAP mapping; tags outside it (frustrated, surprised, ...) give None."""
    return _IEMOCAP_MAP.get(raw_emotion.strip().lower())


def is_nonverbal_marker(token: str) -> bool:
    return bool(_MARKER.match(token))


def filter_nonverbal(utterance: Utterance) -> bool:
    """True (keep) iff the transcript has at least one verbal token."""
    return any(not is_nonverbal_marker(t) for t in utterance.transcript)


# -- synthetic corpus ---------------------------------------------------------

SNR_DB = 10.0


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    num_dialogs: int = 200
    utterances_per_dialog: tuple[int, int] = (10, 10)
    class_ratios: tuple[float, float, float] = SWITCHBOARD_RATIOS
    sample_rate: int = 16000
    duration_range: tuple[float, float] = (1.0, 2.5)
    vocab_size_per_class: int = 40
    shared_filler_fraction: float = 0.3
    snr_db: float = SNR_DB

    def __post_init__(self):
        object.__setattr__(self, "utterances_per_dialog", tuple(int(x) for x in self.utterances_per_dialog))
        object.__setattr__(self, "class_ratios", tuple(float(x) for x in self.class_ratios))
        object.__setattr__(self, "duration_range", tuple(float(x) for x in self.duration_range))
        self.validate()

    def validate(self):
        if len(self.class_ratios) != NUM_CLASSES:
            raise InputError(f"class_ratios needs {NUM_CLASSES} entries, got {len(self.class_ratios)}")
        if any(r < 0 for r in self.class_ratios) or abs(sum(self.class_ratios) - 1.0) > 1e-9:
            raise InputError(f"class_ratios must be non-negative and sum to 1, got {self.class_ratios}")
        lo, hi = self.utterances_per_dialog
        if self.num_dialogs <= 0 or lo <= 0 or hi < lo:
            raise InputError("num_dialogs and utterances_per_dialog must be positive with lo <= hi")
        if self.sample_rate <= 0 or self.vocab_size_per_class <= 0:
            raise InputError("sample_rate and vocab_size_per_class must be positive")
        dlo, dhi = self.duration_range
        if not (0 < dlo <= dhi):
            raise InputError(f"invalid duration_range {self.duration_range}")
        if dlo * self.sample_rate < 300:
            raise InputError("shortest utterance would have fewer than 300 samples")
        if not 0.0 <= self.shared_filler_fraction <= 1.0:
            raise InputError("shared_filler_fraction must lie in [0, 1]")
        if not np.isfinite(self.snr_db):
            raise InputError(f"snr_db must be finite, got {self.snr_db}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown generator config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        return cls.from_dict(json.loads(text))


# fundamental frequency (Hz) per class
CLASS_F0 = {
    SentimentLabel.NEGATIVE: 120.0,
    SentimentLabel.NEUTRAL: 220.0,
    SentimentLabel.POSITIVE: 330.0,
}
LAUGH_PROBABILITY = 0.5


def _quota(ratios: Sequence[float], total: int) -> list[int]:
    # largest remainder keeps every class within 1 of ratio * total
    raw = np.asarray(ratios) * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts.tolist()


def _synth_audio(rng: np.random.Generator, label: SentimentLabel, n: int, sr: int, snr_db: float = SNR_DB):
    t = np.arange(n) / sr
    f0 = CLASS_F0[label] * rng.uniform(0.92, 1.08)
    inst = f0 * (1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(inst) / sr
    n_harm = max(1, int(min(4000.0, 0.45 * sr) // (f0 * 1.05)))
    # sin(h*phase) by the Chebyshev recurrence; far cheaper than n_harm sin calls
    s1, c1 = np.sin(phase), 2.0 * np.cos(phase)
    prev, cur = np.zeros(n), s1
    voiced = s1.copy()
    for h in range(2, n_harm + 1):
        prev, cur = cur, c1 * cur - prev
        voiced += cur / h
    fade = min(n // 4, int(0.02 * sr))
    env = np.ones(n)
    if fade > 0:
        ramp = np.linspace(0.0, 1.0, fade, endpoint=False)
        env[:fade] = ramp
        env[n - fade:] = ramp[::-1]
    signal = voiced * env

    laugh = False
    if label == SentimentLabel.POSITIVE and rng.random() < LAUGH_PROBABILITY:
        laugh = True
        blen = min(n, int(rng.uniform(0.1, 0.3) * sr))
        start = int(rng.integers(0, n - blen + 1))
        tb = np.arange(blen) / sr
        burst = rng.standard_normal(blen) * (0.5 + 0.5 * np.sin(2 * np.pi * 5.0 * tb)) ** 2
        rms = np.sqrt(np.mean(signal**2)) or 1.0
        signal[start:start + blen] += 1.5 * rms * burst

    p_signal = np.mean(signal**2)
    noise_std = np.sqrt(p_signal / 10 ** (snr_db / 10.0))
    signal = signal + rng.standard_normal(n) * noise_std
    peak = np.max(np.abs(signal)) or 1.0
    q = np.round(signal / peak * 0.8 * PCM_SCALE)
    return q / PCM_SCALE, laugh


def _synth_transcript(rng, label: SentimentLabel, n_tokens: int, cfg: GeneratorConfig, laugh: bool):
    v = cfg.vocab_size_per_class
    tokens = []
    for _ in range(n_tokens):
        if rng.random() < cfg.shared_filler_fraction:
            tokens.append(f"f{int(rng.integers(v)):03d}")
        else:
            tokens.append(f"w{int(label) * v + int(rng.integers(v)):04d}")
    if laugh:
        tokens.insert(int(rng.integers(len(tokens) + 1)), "[laughter]")
    return tokens


def _synth_votes(rng, label: SentimentLabel) -> list[str]:
    votes = [label.tag] * 3
    if rng.random() < 0.3:
        others = [lab for lab in SentimentLabel if lab != label]
        votes[int(rng.integers(3))] = others[int(rng.integers(2))].tag
    return votes


def generate_synthetic_corpus(config: GeneratorConfig, name: str = "synthetic") -> Corpus:
    """Deterministic class-conditioned corpus standing in for the licensed data.

    Audio: harmonic tone whose fundamental depends on the class, laugh-like
    noise bursts for half the positive turns, white noise at ``snr_db`` (10 dB by default).
    Text: each class owns a disjoint vocabulary slice, mixed with shared
    filler words at ``shared_filler_fraction``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    lo, hi = config.utterances_per_dialog
    sizes = rng.integers(lo, hi + 1, size=config.num_dialogs)
    total = int(sizes.sum())
    labels = np.repeat(np.arange(NUM_CLASSES), _quota(config.class_ratios, total))
    labels = rng.permutation(labels)

    utts = []
    k = 0
    sr = config.sample_rate
    for d, size in enumerate(sizes):
        dialog_id = f"d{d:04d}"
        for j in range(int(size)):
            label = SentimentLabel(int(labels[k]))
            k += 1
            duration = rng.uniform(*config.duration_range)
            n = max(300, int(round(duration * sr)))
            samples, laugh = _synth_audio(rng, label, n, sr, config.snr_db)
            n_tokens = max(3, int(round(duration * 3)))
            transcript = _synth_transcript(rng, label, n_tokens, config, laugh)
            votes = _synth_votes(rng, label)
            utts.append(Utterance(
                id=f"{dialog_id}_u{j:03d}",
                dialog_id=dialog_id,
                samples=samples,
                sample_rate=sr,
                transcript=tuple(transcript),
                votes=tuple(votes),
                label=label,
            ))
    return Corpus(name, tuple(utts))


# -- manifest I/O -------------------------------------------------------------

def write_wave(path: Path, samples: np.ndarray, sample_rate: int):
    q = np.round(np.asarray(samples) * PCM_SCALE)
    if q.size and (q.min() < -32768 or q.max() > 32767):
        raise InputError(f"{path}: samples outside [-1, 1]")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(q.astype("<i2").tobytes())


def read_wave(path: Path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise InputError(f"{path}: expected mono PCM16 audio")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE, rate


def save_manifest(corpus: Corpus, directory) -> Path:
    """Write ``<directory>/<corpus.name>.csv`` plus one wave file per utterance."""
    directory = Path(directory)
    audio_dir = directory / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    path = directory / f"{corpus.name}.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for u in corpus.utterances:
            rel = ""
            if u.samples.size:
                rel = f"audio/{u.id}.wav"
                write_wave(directory / rel, u.samples, u.sample_rate)
            writer.writerow([
                u.id,
                u.dialog_id,
                rel,
                u.sample_rate,
                " ".join(u.transcript),
                ";".join(u.votes),
                u.label.tag if u.label is not None else "",
            ])
    return path


def load_manifest(path) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    utts = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return Corpus(path.stem, ())
        if header != MANIFEST_COLUMNS:
            raise ManifestError(f"{path}: bad header {header}, expected {MANIFEST_COLUMNS}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}")
            uid, dialog_id, audio_path, rate, transcript, votes, label = row
            try:
                rate = int(rate)
            except ValueError:
                raise ManifestError(f"{path}:{lineno} ({uid}): bad sample_rate {rate!r}") from None
            samples = np.zeros(0)
            if audio_path:
                wav = base / audio_path
                if not wav.is_file():
                    raise ManifestError(f"{path}:{lineno} ({uid}): missing audio file {wav}")
                samples, file_rate = read_wave(wav)
                if file_rate != rate:
                    raise ManifestError(
                        f"{path}:{lineno} ({uid}): wave rate {file_rate} != manifest rate {rate}")
            try:
                utts.append(Utterance(
                    id=uid,
                    dialog_id=dialog_id,
                    samples=samples,
                    sample_rate=rate,
                    transcript=tuple(transcript.split()),
                    votes=tuple(v for v in votes.split(";") if v),
                    label=SentimentLabel.parse(label) if label else None,
                ))
            except InputError as exc:
                raise ManifestError(f"{path}:{lineno} ({uid}): {exc}") from None
    return Corpus(path.stem, tuple(utts))


def count_labels(labels: Iterable[int]) -> dict[SentimentLabel, int]:
    counts = {lab: 0 for lab in SentimentLabel}
    for y in labels:
        counts[SentimentLabel(int(y))] += 1
    return counts
