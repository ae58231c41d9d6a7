"""Training objectives.

The discrimination loss is binary cross-entropy, i.e. the negated
log-likelihood: the discriminator descends on it and the feature mapper
ascends on it through gradient reversal.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, ShapeError

LOG_EPS = 1e-12


def _t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(getattr(x, "data", x), dtype=np.float64))


def _safe_log(x: Tensor) -> Tensor:
    return ad.log(ad.clamp(x, lo=LOG_EPS))


def feature_mapping_loss(y_hat, y) -> Tensor:
    """(1/T) sum_t ||y_hat_t - y_t||^2."""
    y_hat, y = _t(y_hat), _t(y)
    if y_hat.shape != y.shape or y_hat.data.ndim != 2:
        raise ShapeError(f"feature_mapping_loss: shapes {y_hat.shape} vs {y.shape}")
    d = ad.sub(y_hat, y)
    return ad.scale(ad.sum(ad.mul(d, d)), 1.0 / y.shape[0])


def discrimination_loss(d_clean, d_enh) -> Tensor:
    """-(1/T) sum_t [log D(y_t) + log(1 - D(y_hat_t))]."""
    d_clean, d_enh = _t(d_clean), _t(d_enh)
    if d_clean.shape != d_enh.shape:
        raise ShapeError(f"discrimination_loss: shapes {d_clean.shape} vs {d_enh.shape}")
    for name, d in (("clean", d_clean), ("enhanced", d_enh)):
        v = d.data
        if not np.all((v >= 0.0) & (v <= 1.0)):
            raise DataError(f"discrimination_loss: {name} scores outside [0, 1]")
    T = d_clean.shape[0]
    ll = ad.add(ad.sum(_safe_log(d_clean)), ad.sum(_safe_log(ad.sub(1.0, d_enh))))
    return ad.scale(ll, -1.0 / T)


def senone_ce_loss(posteriors, labels) -> Tensor:
    """-(1/T) sum_t log P(s_t | x_t)."""
    posteriors = _t(posteriors)
    labels = np.asarray(labels)
    if posteriors.data.ndim != 2 or labels.shape != (posteriors.shape[0],):
        raise ShapeError(f"senone_ce_loss: {labels.shape} labels for posteriors {posteriors.shape}")
    K = posteriors.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DataError(f"senone label out of range [0, {K})")
    picked = ad.pick(posteriors, labels)
    return ad.scale(ad.sum(_safe_log(picked)), -1.0 / posteriors.shape[0])


def _check_weight(name, value):
    if not (value >= 0 and math.isfinite(value)):
        raise ConfigError(f"{name} must be a finite non-negative weight, got {value}")


def afm_total(l_f, l_d, lam) -> float:
    _check_weight("lambda", lam)
    return float(l_f) - lam * float(l_d)


def saafm_total(l_f, l_d, l_m, lam1, lam2) -> float:
    _check_weight("lambda1", lam1)
    _check_weight("lambda2", lam2)
    return float(l_f) - lam1 * float(l_d) + lam2 * float(l_m)


@dataclass
class LossBreakdown:
    l_f: Optional[float] = None
    l_d: Optional[float] = None
    l_m: Optional[float] = None
    frames: int = 0
    lam1: float = 0.0
    lam2: float = 0.0

    @property
    def total(self) -> float:
        return ((self.l_f or 0.0) - self.lam1 * (self.l_d or 0.0)
                + self.lam2 * (self.l_m or 0.0))

    def record(self, **extra) -> str:
        """One ``key=value`` line; absent terms are written as ``nan``."""
        fields = dict(extra)
        d = asdict(self)
        for key in ("l_f", "l_d", "l_m"):
            fields[key] = float("nan") if d[key] is None else d[key]
        fields["total"] = self.total
        fields["frames"] = self.frames
        fields["lambda1"] = self.lam1
        fields["lambda2"] = self.lam2
        return " ".join(f"{k}={_fmt(v)}" for k, v in fields.items())


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_record(line: str) -> dict:
    out = {}
    for tok in line.split():
        k, _, v = tok.partition("=")
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out
