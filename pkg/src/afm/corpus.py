"""Synthetic parallel clean/noisy corpora with frame-level phone labels.

Clean speech is a chain of toy phones, each a sum of 2-3 sinusoids at the
phone's formant frequencies. Noise is white, amplitude-modulated white, or
AR(1); the latter two deliberately break the stationary, uncorrelated noise
assumption behind plain MSE regression.

Every utterance draws from its own RNG stream keyed by (seed, index), so
generation order does not affect the result.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigError, DataError
from .features import (HOP_LENGTH, SAMPLE_RATE, WIN_LENGTH, CmvnStats, FeatureMatrix,
                       Stage, Waveform, add_deltas, apply_cmvn, compute_cmvn,
                       extract_lfb, num_frames, read_features, write_features, write_wav)

log = logging.getLogger(__name__)

NOISE_KINDS = ("white", "am", "ar1")
MANIFEST = "manifest.txt"
NOISY_STATS = "cmvn_noisy.json"
CLEAN_STATS = "cmvn_clean.json"


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "white"
    snr_db: float = 10.0
    rho: float = 0.0
    am_rate_hz: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not math.isfinite(self.snr_db):
            raise ConfigError("SNR must be finite")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"AR coefficient must lie in [0, 1), got {self.rho}")
        if self.am_rate_hz <= 0:
            raise ConfigError("modulation rate must be positive")


@dataclass(frozen=True)
class Phone:
    formants: tuple
    amplitudes: tuple


@dataclass(frozen=True)
class ToyPhoneInventory:
    phones: tuple
    min_frames: int = 6
    max_frames: int = 16
    jitter: float = 0.04

    @property
    def size(self) -> int:
        return len(self.phones)


def make_inventory(num_phones: int, seed=0, min_frames=6, max_frames=16,
                   fmin=250.0, fmax=3800.0) -> ToyPhoneInventory:
    """Random formant templates; no two phones share a near-identical formant set."""
    if num_phones < 1:
        raise ConfigError("inventory needs at least one phone")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF0]))
    phones = []
    while len(phones) < num_phones:
        n = int(rng.integers(2, 4))
        f = np.sort(np.exp(rng.uniform(np.log(fmin), np.log(fmax), size=n)))
        if np.any(np.diff(np.log(f)) < 0.25):
            continue
        if any(_template_distance(f, p.formants) < 0.3 for p in phones):
            continue
        a = rng.uniform(0.03, 0.07, size=n)
        phones.append(Phone(tuple(float(x) for x in f), tuple(float(x) for x in a)))
    return ToyPhoneInventory(tuple(phones), min_frames, max_frames)


def _template_distance(f, g) -> float:
    # symmetric nearest-formant distance on a log scale
    f, g = np.log(np.asarray(f)), np.log(np.asarray(g))
    return float(max(np.abs(f[:, None] - g[None, :]).min(axis=1).max(),
                     np.abs(g[:, None] - f[None, :]).min(axis=1).max()))


@dataclass
class CleanUtterance:
    waveform: Waveform
    labels: np.ndarray
    segments: List[tuple]  # (phone, start_sample, end_sample)


def synth_clean(inventory: ToyPhoneInventory, duration: float, seed) -> CleanUtterance:
    """Concatenate randomly drawn phones into ``duration`` seconds of audio.

    Each segment gets 5 ms raised-cosine ramps at both ends. Frame ``t`` is
    labelled with the phone active at the frame's centre sample.
    """
    if duration < 0.5:
        raise DataError("synthetic utterances must last at least 0.5 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration * SAMPLE_RATE))
    x = np.zeros(n)
    ramp = int(0.005 * SAMPLE_RATE)
    fade = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    segments = []
    start = 0
    while start < n:
        k = int(rng.integers(inventory.size))
        frames = int(rng.integers(inventory.min_frames, inventory.max_frames + 1))
        end = min(n, start + frames * HOP_LENGTH)
        t = np.arange(end - start) / SAMPLE_RATE
        phone = inventory.phones[k]
        seg = np.zeros(end - start)
        for f, a in zip(phone.formants, phone.amplitudes):
            f = f * (1.0 + inventory.jitter * rng.uniform(-1, 1))
            a = a * (1.0 + 0.2 * rng.uniform(-1, 1))
            seg += a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        m = min(ramp, seg.size // 2)
        seg[:m] *= fade[:m]
        seg[seg.size - m:] *= fade[:m][::-1]
        x[start:end] = seg
        segments.append((k, start, end))
        start = end
    T = num_frames(n)
    centres = np.arange(T) * HOP_LENGTH + WIN_LENGTH // 2
    starts = np.array([s for _, s, _ in segments])
    labels = np.array([k for k, _, _ in segments])[np.searchsorted(starts, centres, side="right") - 1]
    return CleanUtterance(Waveform(x), labels.astype(np.int64), segments)


def make_noise(n: int, spec: NoiseSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    eps = rng.standard_normal(n)
    if spec.kind == "ar1":
        return lfilter([1.0], [1.0, -spec.rho], eps)
    if spec.kind == "am":
        t = np.arange(n) / SAMPLE_RATE
        return eps * (1.0 + np.sin(2 * np.pi * spec.am_rate_hz * t)) / 2.0
    return eps


def apply_noise(clean: Waveform, spec: NoiseSpec) -> Waveform:
    """Add noise scaled so the utterance-level SNR equals ``spec.snr_db``."""
    s = clean.samples
    noise = make_noise(s.size, spec)
    p_clean = np.mean(s ** 2)
    p_noise = np.mean(noise ** 2)
    if p_clean == 0 or p_noise == 0:
        return Waveform(s + noise * 0.0, clean.sample_rate)
    noise = noise * np.sqrt(p_clean / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    return Waveform(s + noise, clean.sample_rate)


def measured_snr(clean: Waveform, noisy: Waveform) -> float:
    noise = noisy.samples - clean.samples
    return 10.0 * np.log10(np.sum(clean.samples ** 2) / np.sum(noise ** 2))


# ----------------------------------------------------------------------------
# corpus


@dataclass
class ParallelUtterance:
    id: str
    noisy: FeatureMatrix
    clean: FeatureMatrix
    labels: Optional[np.ndarray]
    noise: NoiseSpec
    split: str = "train"

    def __post_init__(self):
        T = self.noisy.frames
        if self.clean.frames != T or (self.labels is not None and len(self.labels) != T):
            raise DataError(f"{self.id}: noisy, clean and labels are not frame-synchronized")

    @property
    def frames(self) -> int:
        return self.noisy.frames


@dataclass
class Corpus:
    utterances: List[ParallelUtterance]
    noisy_stats: CmvnStats
    clean_stats: CmvnStats
    root: Optional[Path] = None

    def split(self, name: str) -> List[ParallelUtterance]:
        return [u for u in self.utterances if u.split == name]

    @property
    def train(self):
        return self.split("train")

    @property
    def test(self):
        return self.split("test")

    def noisy_static(self, utt: ParallelUtterance) -> np.ndarray:
        """Static part of the noisy input expressed in the clean-normalized domain.

        This is the "no enhancement" reference: undo the noisy CMVN on the
        first block of the input and apply the clean statistics.
        """
        d = self.clean_stats.dims
        raw = utt.noisy.data[:, :d] * np.sqrt(self.noisy_stats.var[:d]) + self.noisy_stats.mean[:d]
        return ((raw - self.clean_stats.mean) / np.sqrt(self.clean_stats.var)).astype(utt.clean.data.dtype)


@dataclass
class CorpusConfig:
    n_utts: int = 200
    seed: int = 0
    num_phones: int = 8
    min_duration: float = 0.5
    max_duration: float = 0.8
    noise_kinds: tuple = ("ar1", "am")
    snr_db: float = 10.0
    snr_jitter_db: float = 0.0
    rho: float = 0.9
    am_rate_hz: float = 4.0
    test_fraction: float = 0.2
    write_wav: bool = False

    def __post_init__(self):
        if self.n_utts < 1:
            raise ConfigError("n_utts must be >= 1")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in [0, 1)")
        if self.min_duration < 0.5 or self.max_duration < self.min_duration:
            raise ConfigError("durations must satisfy 0.5 <= min_duration <= max_duration")
        self.noise_kinds = tuple(self.noise_kinds)
        for k in self.noise_kinds:
            NoiseSpec(kind=k, rho=self.rho if k == "ar1" else 0.0)


def _stream(seed: int, idx: int, tag: int):
    return np.random.default_rng(np.random.SeedSequence([seed, idx, tag]))


def generate_utterance(cfg: CorpusConfig, inventory: ToyPhoneInventory, idx: int):
    """Raw material for one utterance: clean audio, labels, noisy audio, noise spec."""
    rng = _stream(cfg.seed, idx, 1)
    duration = float(rng.uniform(cfg.min_duration, cfg.max_duration))
    kind = cfg.noise_kinds[idx % len(cfg.noise_kinds)]
    snr = cfg.snr_db + (float(rng.uniform(-1, 1)) * cfg.snr_jitter_db if cfg.snr_jitter_db else 0.0)
    spec = NoiseSpec(kind=kind, snr_db=snr, rho=cfg.rho if kind == "ar1" else 0.0,
                     am_rate_hz=cfg.am_rate_hz, seed=int(rng.integers(2 ** 31)))
    clean = synth_clean(inventory, duration, _stream(cfg.seed, idx, 2))
    noisy = apply_noise(clean.waveform, spec)
    return clean, noisy, spec


def build_corpus(cfg: CorpusConfig, out_dir=None, inventory: ToyPhoneInventory = None) -> Corpus:
    """Synthesize, featurize, normalize and (optionally) persist a corpus.

    CMVN statistics come from the training split only and are applied to
    every utterance; noisy inputs and clean targets use separate statistics.
    """
    if inventory is None:
        inventory = make_inventory(cfg.num_phones, seed=cfg.seed)
    n_test = int(round(cfg.n_utts * cfg.test_fraction))
    order = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5917])).permutation(cfg.n_utts)
    test_ids = set(order[:n_test].tolist())

    raw = []
    for i in range(cfg.n_utts):
        clean, noisy, spec = generate_utterance(cfg, inventory, i)
        raw.append((f"utt{i:04d}", add_deltas(extract_lfb(noisy)), extract_lfb(clean.waveform),
                    clean.labels, spec, "test" if i in test_ids else "train", clean, noisy))
    train = [r for r in raw if r[5] == "train"] or raw
    noisy_stats = compute_cmvn([r[1] for r in train])
    clean_stats = compute_cmvn([r[2] for r in train])

    utts = []
    for uid, x, y, labels, spec, split, _, _ in raw:
        xn = apply_cmvn(x, noisy_stats)
        yn = apply_cmvn(y, clean_stats)
        # persisted precision; in-memory corpus equals what load_corpus returns
        xn = FeatureMatrix(xn.data.astype(np.float32), Stage.NORMALIZED)
        yn = FeatureMatrix(yn.data.astype(np.float32), Stage.NORMALIZED)
        utts.append(ParallelUtterance(uid, xn, yn, labels, spec, split))
    corpus = Corpus(utts, noisy_stats, clean_stats)
    if out_dir is not None:
        write_corpus(corpus, out_dir, wavs=[(r[0], r[6].waveform, r[7]) for r in raw]
                     if cfg.write_wav else None)
    return corpus


def _manifest_line(u: ParallelUtterance) -> str:
    s = u.noise
    return (f"id={u.id} split={u.split} frames={u.frames} "
            f"noisy=feats/{u.id}.noisy.feat clean=feats/{u.id}.clean.feat "
            f"labels={'feats/' + u.id + '.labels' if u.labels is not None else '-'} "
            f"noise={s.kind} snr_db={s.snr_db!r} rho={s.rho!r} am_rate_hz={s.am_rate_hz!r} "
            f"noise_seed={s.seed}")


def write_corpus(corpus: Corpus, out_dir, wavs=None) -> None:
    root = Path(out_dir)
    try:
        (root / "feats").mkdir(parents=True, exist_ok=True)
        for u in corpus.utterances:
            write_features(root / "feats" / f"{u.id}.noisy.feat", u.noisy)
            write_features(root / "feats" / f"{u.id}.clean.feat", u.clean)
            if u.labels is not None:
                (root / "feats" / f"{u.id}.labels").write_text(
                    " ".join(str(int(k)) for k in u.labels) + "\n")
        if wavs:
            (root / "wav").mkdir(exist_ok=True)
            for uid, clean, noisy in wavs:
                write_wav(root / "wav" / f"{uid}.clean.wav", clean)
                write_wav(root / "wav" / f"{uid}.noisy.wav", noisy)
        corpus.noisy_stats.save(root / NOISY_STATS)
        corpus.clean_stats.save(root / CLEAN_STATS)
        (root / MANIFEST).write_text("".join(_manifest_line(u) + "\n" for u in corpus.utterances))
    except OSError as exc:
        raise DataError(f"failed writing corpus under {root}: {exc}") from exc
    corpus.root = root
    log.info("wrote %d utterances to %s", len(corpus.utterances), root)


def parse_manifest(path) -> List[dict]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        records.append(dict(tok.split("=", 1) for tok in line.split()))
    return records


def load_corpus(root) -> Corpus:
    root = Path(root)
    try:
        records = parse_manifest(root / MANIFEST)
        noisy_stats = CmvnStats.load(root / NOISY_STATS)
        clean_stats = CmvnStats.load(root / CLEAN_STATS)
        utts = []
        for r in records:
            labels = None
            if r["labels"] != "-":
                labels = np.array((root / r["labels"]).read_text().split(), dtype=np.int64)
            spec = NoiseSpec(r["noise"], float(r["snr_db"]), float(r["rho"]),
                             float(r["am_rate_hz"]), int(r["noise_seed"]))
            u = ParallelUtterance(r["id"], read_features(root / r["noisy"]),
                                  read_features(root / r["clean"]), labels, spec, r["split"])
            if u.frames != int(r["frames"]):
                raise DataError(f"{u.id}: manifest says {r['frames']} frames, files have {u.frames}")
            utts.append(u)
    except (OSError, KeyError) as exc:
        raise DataError(f"cannot load corpus from {root}: {exc}") from exc
    return Corpus(utts, noisy_stats, clean_stats, root)
