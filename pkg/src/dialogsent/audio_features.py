"""Fixed-frame MFCC featurisation.

Every utterance yields exactly 300 frames: the analysis window grows with the
signal length and consecutive windows overlap by 25 %, so long turns are
compressed and short ones stretched onto the same time grid. Each frame has
20 MFCCs, extended with first and second regression deltas to 60 columns.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from scipy.signal import get_window

from .corpus import Utterance
from .errors import InputError, LoadError

NUM_FRAMES = 300
NUM_COEFFS = 20
FEATURE_DIM = 3 * NUM_COEFFS
DELTA_RADIUS = 2

CACHE_MAGIC = b"MF60"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class MfccConfig:
    num_frames: int = NUM_FRAMES
    num_coeffs: int = NUM_COEFFS
    overlap_fraction: float = 0.25
    num_mel_filters: int = 40
    fft_size: Optional[int] = None
    log_floor: float = 1e-10
    fmin: float = 0.0
    fmax: Optional[float] = None

    def __post_init__(self):
        if self.num_frames != NUM_FRAMES or self.num_coeffs != NUM_COEFFS:
            raise InputError("num_frames and num_coeffs are fixed at 300 and 20")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise InputError(f"overlap_fraction must lie in [0, 1), got {self.overlap_fraction}")
        if self.num_mel_filters < self.num_coeffs:
            raise InputError("need at least as many mel filters as coefficients")
        if self.fft_size is not None and (self.fft_size <= 0 or self.fft_size & (self.fft_size - 1)):
            raise InputError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.log_floor <= 0:
            raise InputError("log_floor must be positive")


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    window_length: int
    hop_length: int


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def framing_plan(num_samples: int, num_frames: int = NUM_FRAMES, overlap: float = 0.25):
    """Return ``(window_length, hop_length, padded_length)`` giving exactly ``num_frames`` frames.

    W = ceil(N / (1 + (1 - overlap) * (num_frames - 1))), hop = round((1 - overlap) * W).
    When hop rounding makes the frames fall short of N, W is bumped until
    they cover the whole signal, so no audio is dropped.
    """
    if num_samples < num_frames:
        raise InputError(f"utterance too short: {num_samples} samples < {num_frames}")
    step = 1.0 - overlap
    window = math.ceil(num_samples / (1.0 + step * (num_frames - 1)))
    while True:
        hop = max(1, _half_up(step * window))
        padded = window + (num_frames - 1) * hop
        if padded >= num_samples:
            return window, hop, padded
        window += 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=64)
def mel_filterbank(sample_rate: int, fft_size: int, num_filters: int, fmin: float, fmax: float) -> np.ndarray:
    """(num_filters, fft_size // 2 + 1) triangular HTK-mel weights, unnormalised."""
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_filters + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mel_center_frequencies(sample_rate: int, num_filters: int = 40, fmin: float = 0.0, fmax=None) -> np.ndarray:
    fmax = sample_rate / 2 if fmax is None else fmax
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_filters + 2))[1:-1]


def frame_signal(samples: np.ndarray, num_frames: int = NUM_FRAMES, overlap: float = 0.25):
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    window, hop, padded = framing_plan(samples.size, num_frames, overlap)
    x = np.zeros(padded)
    x[:samples.size] = samples
    frames = sliding_window_view(x, window)[::hop]
    assert frames.shape[0] == num_frames
    return frames, window, hop


def mel_energies(samples, sample_rate: int, config: MfccConfig = MfccConfig()):
    """Pre-log mel filterbank energies, shape (300, num_mel_filters)."""
    frames, window, hop = frame_signal(samples, config.num_frames, config.overlap_fraction)
    nfft = config.fft_size or 1 << (window - 1).bit_length()
    if nfft < window:
        raise InputError(f"fft_size {nfft} shorter than window {window}")
    spec = np.abs(np.fft.rfft(frames * get_window("hann", window), n=nfft)) ** 2
    fmax = sample_rate / 2 if config.fmax is None else config.fmax
    fb = mel_filterbank(int(sample_rate), nfft, config.num_mel_filters, float(config.fmin), float(fmax))
    return spec @ fb.T, window, hop


def extract_mfcc(samples, sample_rate: int, config: MfccConfig = MfccConfig()) -> np.ndarray:
    energies, _, _ = mel_energies(samples, sample_rate, config)
    logmel = np.log(np.maximum(energies, config.log_floor))
    return dct(logmel, type=2, norm="ortho", axis=1)[:, :config.num_coeffs]


def compute_deltas(matrix, radius: int = DELTA_RADIUS) -> np.ndarray:
    """Regression deltas along axis 0, edge frames replicated."""
    c = np.asarray(matrix, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1:
        raise InputError(f"expected a non-empty T x D matrix, got shape {c.shape}")
    t = c.shape[0]
    padded = np.pad(c, ((radius, radius), (0, 0)), mode="edge")
    denom = 2.0 * sum(n * n for n in range(1, radius + 1))
    out = np.zeros_like(c)
    for n in range(1, radius + 1):
        out += n * (padded[radius + n:radius + n + t] - padded[radius - n:radius - n + t])
    return out / denom


def featurize_samples(samples, sample_rate: int, config: MfccConfig = MfccConfig()) -> FeatureMatrix:
    samples = np.asarray(samples, dtype=np.float64)
    window, hop, _ = framing_plan(samples.size, config.num_frames, config.overlap_fraction)
    mfcc = extract_mfcc(samples, sample_rate, config)
    d1 = compute_deltas(mfcc)
    d2 = compute_deltas(d1)
    return FeatureMatrix(np.hstack([mfcc, d1, d2]), window, hop)


def featurize(utterance: Utterance, config: MfccConfig = MfccConfig()) -> FeatureMatrix:
    try:
        return featurize_samples(utterance.samples, utterance.sample_rate, config)
    except InputError as exc:
        raise InputError(f"utterance {utterance.id}: {exc}") from None


# -- on-disk cache --------------------------------------------------------------

def write_matrix(path, values) -> None:
    """Write a float32 row-major grid behind the 16-byte MF60 header."""
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise InputError(f"expected a 2-D grid, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes())


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise LoadError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise LoadError(f"{path}: not an MF60 v{CACHE_VERSION} file")
    if len(data) != _HEADER.size + 4 * rows * cols:
        raise LoadError(f"{path}: payload size does not match {rows}x{cols}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float32)


def _featurize_values(args):
    utt, config = args
    return featurize(utt, config).values


def featurize_many(utterances: Iterable[Utterance], config: MfccConfig = MfccConfig(),
                   cache_dir=None, jobs: int = 1) -> dict[str, np.ndarray]:
    """Features for many utterances as float32, keyed and ordered by the input order.

    With ``cache_dir`` each grid is read from / written to ``<id>.mf60``.
    """
    utterances = list(utterances)
    out: dict[str, np.ndarray] = {}
    todo = []
    cache = Path(cache_dir) if cache_dir is not None else None
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
    for u in utterances:
        if cache is not None and (cache / f"{u.id}.mf60").is_file():
            out[u.id] = read_matrix(cache / f"{u.id}.mf60")
        else:
            todo.append(u)
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_featurize_values, [(u, config) for u in todo], chunksize=16))
    else:
        results = [_featurize_values((u, config)) for u in todo]
    for u, values in zip(todo, results):
        values = values.astype(np.float32)
        if cache is not None:
            write_matrix(cache / f"{u.id}.mf60", values)
        out[u.id] = values
    return {u.id: out[u.id] for u in utterances}
