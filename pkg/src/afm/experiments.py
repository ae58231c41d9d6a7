"""Desk-scale comparative runs: enhancement (noisy / FM / AFM) and
senone-aware training (multi-condition / SA-FM / SA-AFM).

Each run builds its own corpus from the seed, trains every system on the
training split and scores them on the held-out split. The same functions
back the acceptance tests and the ``afm experiment`` command.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

from .corpus import CorpusConfig, build_corpus
from .evaluation import (enhanced_outputs, eval_discriminator, eval_enhancement,
                         eval_frame_accuracy)
from .training import (TrainingConfig, train_afm, train_discriminator, train_fm,
                       train_multicondition, train_saafm)

log = logging.getLogger(__name__)

SEEDS = (0, 1, 2)
SENONE_SNR_DB = -5.0


def enhancement_corpus(seed: int) -> CorpusConfig:
    return CorpusConfig(n_utts=200, seed=seed, noise_kinds=("ar1", "am"), snr_db=10.0)


def senone_corpus(seed: int) -> CorpusConfig:
    return CorpusConfig(n_utts=200, seed=seed, num_phones=8, noise_kinds=("ar1", "am"),
                        snr_db=SENONE_SNR_DB)


def desk_config(seed: int, **overrides) -> TrainingConfig:
    """Hyperparameters tuned for the 200-utterance toy corpora."""
    base = dict(lr=3e-3, lr_d=1e-2, lr_m=1e-2, momentum=0.5, epochs=8, lam=1.0, lam2=1.0,
                seed=seed)
    base.update(overrides)
    return TrainingConfig(**base)


@dataclass
class EnhancementResult:
    seed: int
    mse_noisy: float
    mse_fm: float
    mse_afm: float
    distance_noisy: float
    distance_fm: float
    distance_afm: float
    disc_posthoc_fm: float
    disc_cotrained_afm: float
    seconds: float
    runs: Dict = field(default_factory=dict, repr=False)

    @property
    def ordering_holds(self) -> bool:
        return (self.mse_noisy > self.mse_fm and self.mse_afm <= 1.05 * self.mse_fm
                and self.distance_afm < self.distance_fm)

    @property
    def adversarial_holds(self) -> bool:
        return self.disc_posthoc_fm >= 0.8 and self.disc_cotrained_afm < self.disc_posthoc_fm

    def record(self) -> Dict:
        return {k: getattr(self, k) for k in (
            "seed", "mse_noisy", "mse_fm", "mse_afm", "distance_noisy", "distance_fm",
            "distance_afm", "disc_posthoc_fm", "disc_cotrained_afm", "seconds")}


def run_enhancement(seed: int, config: Optional[TrainingConfig] = None, out_dir=None,
                    disc_epochs: int = 6) -> EnhancementResult:
    """FM and AFM on one seed's corpus, plus a discriminator trained after
    the fact against the frozen FM mapper."""
    t0 = time.perf_counter()
    cfg = config or desk_config(seed)
    out = Path(out_dir) / f"seed{seed}" if out_dir is not None else None
    corpus = build_corpus(enhancement_corpus(seed))
    fm = train_fm(corpus, cfg, out_dir=out and out / "fm")
    afm = train_afm(corpus, cfg, out_dir=out and out / "afm")
    posthoc = train_discriminator(corpus, fm.networks["f"],
                                  replace(cfg, lr=cfg.lr_d or cfg.lr, epochs=disc_epochs),
                                  out_dir=out and out / "posthoc")
    fm_out = enhanced_outputs(fm.networks["f"], corpus)
    afm_out = enhanced_outputs(afm.networks["f"], corpus)
    r_fm = eval_enhancement(None, corpus, outputs=fm_out)
    r_afm = eval_enhancement(None, corpus, outputs=afm_out)
    res = EnhancementResult(
        seed=seed,
        mse_noisy=r_fm.mse_noisy, mse_fm=r_fm.mse_enhanced, mse_afm=r_afm.mse_enhanced,
        distance_noisy=r_fm.distance_noisy, distance_fm=r_fm.distance_enhanced,
        distance_afm=r_afm.distance_enhanced,
        disc_posthoc_fm=eval_discriminator(posthoc.networks["d"], None, corpus, outputs=fm_out),
        disc_cotrained_afm=eval_discriminator(afm.networks["d"], None, corpus, outputs=afm_out),
        seconds=time.perf_counter() - t0,
        runs={"fm": fm, "afm": afm, "posthoc": posthoc, "corpus": corpus,
              "outputs": {"fm": fm_out, "afm": afm_out}},
    )
    log.info("enhancement seed=%d %s", seed, res.record())
    return res


@dataclass
class SenoneResult:
    seed: int
    acc_mc: float
    acc_safm: float
    acc_saafm: float
    seconds: float
    runs: Dict = field(default_factory=dict, repr=False)

    @property
    def ordering_holds(self) -> bool:
        return self.acc_saafm >= self.acc_safm >= self.acc_mc

    def record(self) -> Dict:
        return {k: getattr(self, k) for k in ("seed", "acc_mc", "acc_safm", "acc_saafm", "seconds")}


def run_senone(seed: int, config: Optional[TrainingConfig] = None, out_dir=None,
               mc_epochs: int = 40) -> SenoneResult:
    """Multi-condition acoustic model, then SA-FM on top of an FM system and
    SA-AFM on top of an AFM system, both starting from the converged
    multi-condition M.

    The baseline gets ``mc_epochs`` (it is cheap and should be converged,
    otherwise the SA systems win just by training M for longer).
    """
    t0 = time.perf_counter()
    cfg = config or desk_config(seed)
    ccfg = senone_corpus(seed)
    cfg = replace(cfg, m_topology=replace(cfg.m_topology, output_dim=ccfg.num_phones))
    out = Path(out_dir) / f"seed{seed}" if out_dir is not None else None
    corpus = build_corpus(ccfg)
    mc = train_multicondition(corpus, replace(cfg, epochs=mc_epochs), out_dir=out and out / "mc")
    fm = train_fm(corpus, cfg, out_dir=out and out / "fm")
    afm = train_afm(corpus, cfg, out_dir=out and out / "afm")
    safm = train_saafm(corpus, replace(cfg, mode="sa-fm"),
                       init={"f": fm.networks["f"], "m": mc.networks["m"]},
                       out_dir=out and out / "sa-fm")
    saafm = train_saafm(corpus, replace(cfg, mode="sa-afm"),
                        init={"f": afm.networks["f"], "d": afm.networks["d"], "m": mc.networks["m"]},
                        out_dir=out and out / "sa-afm")
    res = SenoneResult(
        seed=seed,
        acc_mc=eval_frame_accuracy(None, mc.networks["m"], corpus),
        acc_safm=eval_frame_accuracy(safm.networks["f"], safm.networks["m"], corpus),
        acc_saafm=eval_frame_accuracy(saafm.networks["f"], saafm.networks["m"], corpus),
        seconds=time.perf_counter() - t0,
        runs={"mc": mc, "fm": fm, "afm": afm, "sa-fm": safm, "sa-afm": saafm, "corpus": corpus},
    )
    log.info("senone seed=%d %s", seed, res.record())
    return res


def majority(flags: List[bool], need: int = 2) -> bool:
    return sum(bool(f) for f in flags) >= need
