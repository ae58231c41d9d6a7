"""Report figures written to files (Agg backend, no display needed)."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def _figure(width=6.0, rows=1):
    fig, axes = plt.subplots(rows, 1, figsize=(width, width * GOLDEN * rows), squeeze=False)
    for ax in axes[:, 0]:
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
    return fig, axes[:, 0]


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_loss_history(records: Sequence[Mapping], path, title="") -> Path:
    """One panel per loss term present in the per-epoch records."""
    keys = [k for k in ("l_f", "l_d", "l_m") if any(np.isfinite(r.get(k, np.nan)) for r in records)]
    fig, axes = _figure(rows=max(len(keys), 1))
    epochs = [r.get("epoch", i + 1) for i, r in enumerate(records)]
    for ax, k in zip(axes, keys):
        ax.plot(epochs, [r[k] for r in records], marker="o", ms=3)
        ax.set_ylabel(k)
    axes[-1].set_xlabel("epoch")
    if title:
        axes[0].set_title(title)
    return _save(fig, path)


def plot_feature_moments(series: Dict[str, np.ndarray], path, reference="clean") -> Path:
    """Per-dimension mean and variance of each feature set, clean as reference."""
    fig, (ax_m, ax_v) = _figure(width=7.0, rows=2)
    for name, feats in series.items():
        style = dict(color="k", lw=2) if name == reference else dict(lw=1, marker=".", ms=4)
        dims = np.arange(feats.shape[1])
        ax_m.plot(dims, feats.mean(axis=0), label=name, **style)
        ax_v.plot(dims, feats.var(axis=0), label=name, **style)
    ax_m.set_ylabel("mean")
    ax_v.set_ylabel("variance")
    ax_v.set_xlabel("filterbank channel")
    ax_m.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_seed_comparison(rows: Sequence[Mapping], metric: str, systems: Sequence[str], path) -> Path:
    """Grouped bars of ``metric`` per seed, one bar per system."""
    fig, (ax,) = _figure()
    width = 0.8 / len(systems)
    x = np.arange(len(rows))
    for i, s in enumerate(systems):
        ax.bar(x + i * width, [r[f"{metric}_{s}"] for r in rows], width, label=s)
    ax.set_xticks(x + width * (len(systems) - 1) / 2)
    ax.set_xticklabels([f"seed {r['seed']}" for r in rows])
    ax.set_ylabel(metric)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)
