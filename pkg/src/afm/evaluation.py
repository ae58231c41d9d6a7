"""Feature-domain evaluation: MSE, distribution distance, discriminator
accuracy and frame classification accuracy."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .corpus import Corpus, ParallelUtterance
from .errors import DataError, ShapeError, StageError
from .features import FeatureMatrix
from .training import am_posteriors, discriminator_scores, enhance


def frame_mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over frames of the squared Euclidean distance between rows."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frame_mse: shapes {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2) / a.shape[0])


def distribution_distance(a: np.ndarray, b: np.ndarray) -> float:
    """mean_d |mean_a - mean_b| + |var_a - var_b| over pooled frames."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"distribution_distance: dims {a.shape[1]} vs {b.shape[1]}")
    return float(np.mean(np.abs(a.mean(0) - b.mean(0)) + np.abs(a.var(0) - b.var(0))))


def frame_accuracy(posteriors: np.ndarray, labels: np.ndarray) -> float:
    posteriors = np.asarray(posteriors)
    labels = np.asarray(labels)
    if posteriors.shape[0] != labels.shape[0]:
        raise ShapeError("frame_accuracy: posteriors and labels differ in length")
    return float(np.mean(np.argmax(posteriors, axis=1) == labels))


def discriminator_accuracy(d_clean: np.ndarray, d_enh: np.ndarray) -> float:
    """Threshold at 0.5; a score of exactly 0.5 counts as 'enhanced'."""
    correct = np.sum(np.asarray(d_clean) > 0.5) + np.sum(np.asarray(d_enh) <= 0.5)
    return float(correct / (len(d_clean) + len(d_enh)))


@dataclass
class EvalReport:
    per_utterance: List[Dict] = field(default_factory=list)
    mse_enhanced: Optional[float] = None
    mse_noisy: Optional[float] = None
    distance_enhanced: Optional[float] = None
    distance_noisy: Optional[float] = None
    disc_accuracy: Optional[float] = None
    frame_accuracy: Optional[float] = None
    frames: int = 0

    def lines(self, per_utterance=False) -> List[str]:
        out = []
        if per_utterance:
            for r in self.per_utterance:
                out.append("utt " + " ".join(f"{k}={_fmt(v)}" for k, v in r.items()))
        corpus = {k: getattr(self, k) for k in (
            "frames", "mse_enhanced", "mse_noisy", "distance_enhanced", "distance_noisy",
            "disc_accuracy", "frame_accuracy")}
        out.append("corpus " + " ".join(f"{k}={_fmt(v)}" for k, v in corpus.items() if v is not None))
        return out


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def _held_out(corpus: Corpus, split: Optional[str]) -> List[ParallelUtterance]:
    utts = corpus.utterances if split is None else corpus.split(split)
    if not utts:
        raise DataError(f"no utterances in split {split!r}")
    return utts


def enhanced_outputs(f_model, corpus: Corpus, split: Optional[str] = "test"):
    """[(utterance, enhanced ndarray)] for the split."""
    return [(u, enhance(f_model, u.noisy).data) for u in _held_out(corpus, split)]


def eval_enhancement(f_model, corpus: Corpus, split: Optional[str] = "test",
                     outputs=None) -> EvalReport:
    """MSE of F(x) and of the unenhanced noisy statics against the clean targets."""
    outputs = outputs if outputs is not None else enhanced_outputs(f_model, corpus, split)
    per, enh, cln, noi = [], [], [], []
    for u, y_hat in outputs:
        x_static = corpus.noisy_static(u)
        per.append({"id": u.id, "frames": u.frames,
                    "mse_enhanced": frame_mse(y_hat, u.clean.data),
                    "mse_noisy": frame_mse(x_static, u.clean.data)})
        enh.append(y_hat)
        cln.append(u.clean.data)
        noi.append(x_static)
    frames = sum(r["frames"] for r in per)
    enh, cln, noi = np.concatenate(enh), np.concatenate(cln), np.concatenate(noi)
    return EvalReport(
        per_utterance=per,
        mse_enhanced=sum(r["frames"] * r["mse_enhanced"] for r in per) / frames,
        mse_noisy=sum(r["frames"] * r["mse_noisy"] for r in per) / frames,
        distance_enhanced=distribution_distance(enh, cln),
        distance_noisy=distribution_distance(noi, cln),
        frames=frames,
    )


def eval_features(enhanced: FeatureMatrix, reference: FeatureMatrix) -> EvalReport:
    """Compare two persisted feature files (e.g. ``enhance`` output vs clean)."""
    if enhanced.stage != reference.stage:
        raise StageError(f"stage mismatch: {enhanced.stage.name} vs {reference.stage.name}")
    return EvalReport(
        per_utterance=[{"id": "-", "frames": enhanced.frames,
                        "mse_enhanced": frame_mse(enhanced.data, reference.data)}],
        mse_enhanced=frame_mse(enhanced.data, reference.data),
        distance_enhanced=distribution_distance(enhanced.data, reference.data),
        frames=enhanced.frames,
    )


def eval_discriminator(d_model, f_model, corpus: Corpus, split: Optional[str] = "test",
                       outputs=None) -> float:
    """Accuracy of D over balanced clean / enhanced held-out frames."""
    outputs = outputs if outputs is not None else enhanced_outputs(f_model, corpus, split)
    d_clean = np.concatenate([discriminator_scores(d_model, u.clean.data) for u, _ in outputs])
    d_enh = np.concatenate([discriminator_scores(d_model, y) for _, y in outputs])
    return discriminator_accuracy(d_clean, d_enh)


def eval_frame_accuracy(f_model, m_model, corpus: Corpus, split: Optional[str] = "test") -> float:
    """Frame accuracy of M(F(x)); with ``f_model=None`` M reads the noisy statics."""
    hits = total = 0
    for u in _held_out(corpus, split):
        if u.labels is None:
            raise DataError(f"{u.id}: no labels")
        feats = corpus.noisy_static(u) if f_model is None else enhance(f_model, u.noisy).data
        post = am_posteriors(m_model, feats).data
        hits += int(np.sum(np.argmax(post, axis=1) == u.labels))
        total += u.frames
    return hits / total
