"""Log-Mel filterbank front-end, deltas, splicing and global CMVN.

Defaults: 16 kHz audio, 25 ms Hamming window, 10 ms hop, 512-point FFT,
29 triangular Mel filters spanning 0-8 kHz, log floor 1e-10.
"""
from __future__ import annotations

import enum
import json
import struct
import warnings
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError, ShapeError, StageError

SAMPLE_RATE = 16000
WIN_LENGTH = 400
HOP_LENGTH = 160
N_FFT = 512
N_MELS = 29
LOG_FLOOR = 1e-10
DELTA_WINDOW = 2
VAR_FLOOR = 1e-8

FEAT_MAGIC = b"AFMFEAT1"
_FEAT_HEADER = struct.Struct("<8sIIB")


class Stage(enum.IntEnum):
    STATIC = 0
    DELTAS = 1
    SPLICED = 2
    NORMALIZED = 3
    POSTERIOR = 4


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise DataError("sample_rate must be positive")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("waveform must be a non-empty mono signal")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureMatrix:
    """T x dims features plus the processing stage that produced them."""

    data: np.ndarray
    stage: Stage = Stage.STATIC

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        if self.data.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-d, got shape {self.data.shape}")
        self.stage = Stage(self.stage)
        if self.stage == Stage.DELTAS and self.dims % 3:
            raise ShapeError(f"delta features need dims divisible by 3, got {self.dims}")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        return (isinstance(other, FeatureMatrix) and self.stage == other.stage
                and self.data.shape == other.data.shape
                and np.array_equal(self.data, other.data))


# ----------------------------------------------------------------------------
# log-Mel filterbank


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels=N_MELS, fmin=0.0, fmax=SAMPLE_RATE / 2):
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    return edges[1:-1]


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE,
                   fmin=0.0, fmax=None) -> np.ndarray:
    """Triangular filters (n_mels x n_fft//2+1) with adjacent filters sharing edges."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    return np.clip(np.minimum(rising, falling), 0.0, None)


_FBANK = mel_filterbank()
_WINDOW = np.hamming(WIN_LENGTH)


def num_frames(n_samples: int, win=WIN_LENGTH, hop=HOP_LENGTH) -> int:
    return 1 + (n_samples - win) // hop if n_samples >= win else 0


def frame_signal(x: np.ndarray, win=WIN_LENGTH, hop=HOP_LENGTH) -> np.ndarray:
    n = num_frames(x.size, win, hop)
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def extract_lfb(w: Waveform) -> FeatureMatrix:
    if w.sample_rate != SAMPLE_RATE:
        raise DataError(f"only {SAMPLE_RATE} Hz audio is supported, got {w.sample_rate}")
    if w.samples.size < WIN_LENGTH:
        raise DataError(f"audio shorter than one {WIN_LENGTH}-sample window")
    frames = frame_signal(w.samples) * _WINDOW
    power = np.abs(np.fft.rfft(frames, n=N_FFT, axis=1)) ** 2
    energies = power @ _FBANK.T
    return FeatureMatrix(np.log(np.maximum(energies, LOG_FLOOR)), Stage.STATIC)


# ----------------------------------------------------------------------------
# deltas, splicing


def _regression_delta(c: np.ndarray, N=DELTA_WINDOW) -> np.ndarray:
    T = c.shape[0]
    padded = np.concatenate([np.repeat(c[:1], N, axis=0), c, np.repeat(c[-1:], N, axis=0)])
    num = np.zeros_like(c, dtype=np.float64)
    for n in range(1, N + 1):
        num += n * (padded[N + n:N + n + T] - padded[N - n:N - n + T])
    return num / (2 * sum(n * n for n in range(1, N + 1)))


def add_deltas(f: FeatureMatrix) -> FeatureMatrix:
    """Append first and second order regression deltas: [static | d | dd]."""
    if f.stage != Stage.STATIC:
        raise StageError(f"add_deltas expects static features, got {f.stage.name}")
    static = f.data.astype(np.float64)
    d1 = _regression_delta(static)
    d2 = _regression_delta(d1)
    return FeatureMatrix(np.concatenate([static, d1, d2], axis=1), Stage.DELTAS)


def splice(f: FeatureMatrix, left=5, right=5) -> FeatureMatrix:
    if f.stage != Stage.DELTAS:
        raise StageError(f"splice expects delta features, got {f.stage.name}")
    x = f.data
    T = x.shape[0]
    idx = np.clip(np.arange(T)[:, None] + np.arange(-left, right + 1)[None, :], 0, T - 1)
    return FeatureMatrix(x[idx].reshape(T, -1), Stage.SPLICED)


# ----------------------------------------------------------------------------
# CMVN


@dataclass
class CmvnStats:
    mean: np.ndarray
    var: np.ndarray
    count: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.count <= 0:
            raise DataError("CMVN stats need a positive frame count")
        if np.any(self.var < 0):
            raise DataError("CMVN variance must be non-negative")

    @property
    def dims(self) -> int:
        return self.mean.size

    def to_dict(self):
        return {"count": int(self.count), "mean": self.mean.tolist(), "var": self.var.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["var"]), int(d["count"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def compute_cmvn(corpus: Sequence[FeatureMatrix]) -> CmvnStats:
    """Corpus-global per-dimension mean and (population) variance."""
    if not corpus:
        raise DataError("compute_cmvn needs at least one matrix")
    dims = {f.dims for f in corpus}
    if len(dims) != 1:
        raise ShapeError(f"compute_cmvn: mixed dims {sorted(dims)}")
    x = np.concatenate([f.data.astype(np.float64) for f in corpus])
    if x.shape[0] < 2:
        raise DataError("compute_cmvn needs at least two frames")
    mean = x.mean(axis=0)
    var = ((x - mean) ** 2).mean(axis=0)
    low = var < VAR_FLOOR
    if np.any(low):
        warnings.warn(f"CMVN: {int(low.sum())} dimension(s) with variance below "
                      f"{VAR_FLOOR}; flooring", RuntimeWarning, stacklevel=2)
        var = np.maximum(var, VAR_FLOOR)
    return CmvnStats(mean, var, x.shape[0])


def apply_cmvn(f: FeatureMatrix, stats: CmvnStats) -> FeatureMatrix:
    if f.stage in (Stage.NORMALIZED, Stage.POSTERIOR):
        raise StageError(f"apply_cmvn: features already at stage {f.stage.name}")
    if f.dims != stats.dims:
        raise ShapeError(f"apply_cmvn: features have {f.dims} dims, stats {stats.dims}")
    out = (f.data.astype(np.float64) - stats.mean) / np.sqrt(stats.var)
    return FeatureMatrix(out, Stage.NORMALIZED)


# ----------------------------------------------------------------------------
# file formats


def write_features(path, f: FeatureMatrix) -> None:
    data = np.ascontiguousarray(f.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(FEAT_MAGIC, f.frames, f.dims, int(f.stage)))
        fh.write(data.tobytes())


def read_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _FEAT_HEADER.size:
        raise FormatError(f"{path}: truncated feature header")
    magic, T, dims, stage = _FEAT_HEADER.unpack_from(raw)
    if magic != FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = raw[_FEAT_HEADER.size:]
    if len(body) != 4 * T * dims:
        raise FormatError(f"{path}: expected {4 * T * dims} data bytes, found {len(body)}")
    try:
        stage = Stage(stage)
    except ValueError:
        raise FormatError(f"{path}: unknown stage tag {stage}") from None
    data = np.frombuffer(body, dtype="<f4").reshape(T, dims).astype(np.float32)
    return FeatureMatrix(data, stage)


def write_wav(path, w: Waveform) -> None:
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise FormatError(f"{path}: only 16-bit mono PCM is supported")
        rate = fh.getframerate()
        pcm = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)
