"""Training procedures for FM, AFM, SA-FM, SA-AFM and the baselines.

One utterance per update, full-sequence BPTT. In the adversarial modes a
single backward pass over ``L_F + L_D (+ L_M)`` updates every network: the
discriminator sees the enhanced features through a gradient reversal layer,
so it descends on ``L_D`` while the feature mapper receives
``dL_F - lambda * dL_D``. The acoustic model sees the enhanced features
through a gradient scale of ``lambda2``, so it descends on ``L_M`` while the
mapper receives ``lambda2 * dL_M``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from .autodiff import SGDMomentum, Tape, Tensor
from .checkpoint import Checkpoint
from .corpus import CLEAN_STATS, NOISY_STATS, Corpus, ParallelUtterance
from .errors import ConfigError, DataError, ShapeError, StageError
from .features import FeatureMatrix, Stage
from .losses import (LossBreakdown, discrimination_loss, feature_mapping_loss,
                     senone_ce_loss)
from .networks import (FfdnnTopology, LstmpTopology, NetworkParams, ffdnn_forward,
                       forward, init_params, lstmp_forward)

log = logging.getLogger(__name__)

MODES = ("fm", "afm", "sa-fm", "sa-afm", "mc", "disc")
_STREAMS = {"f": 11, "d": 12, "m": 13, "shuffle": 14}


@dataclass
class TrainingConfig:
    mode: str = "fm"
    lam: float = 1.0          # gradient reversal coefficient (lambda / lambda1)
    lam2: float = 1.0         # acoustic-model weight (lambda2)
    lr: float = 1e-3
    lr_d: Optional[float] = None
    lr_m: Optional[float] = None
    momentum: float = 0.5
    epochs: int = 10
    seed: int = 0
    dtype: str = "float32"
    f_topology: LstmpTopology = field(default_factory=lambda: LstmpTopology(87, 2, 64, 32, 29))
    d_topology: FfdnnTopology = field(
        default_factory=lambda: FfdnnTopology(29, 2, 32, 1, "sigmoid", "relu"))
    m_topology: FfdnnTopology = field(default_factory=lambda: FfdnnTopology(29, 2, 64, 8, "softmax"))
    freeze_m: bool = False
    batch: str = "utterance"
    bptt_truncation: int = 0
    checkpoint_interval: int = 0
    log_interval: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown training mode {self.mode!r}")
        if self.lam < 0 or self.lam2 < 0:
            raise ConfigError("loss weights must be non-negative")
        for name in ("lr", "lr_d", "lr_m"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.batch != "utterance":
            raise ConfigError("only per-utterance updates are supported")
        if self.bptt_truncation:
            raise ConfigError("truncated BPTT is not supported; leave bptt_truncation = 0")
        if self.f_topology.output_dim != self.d_topology.input_dim:
            raise ConfigError("discriminator input must match feature-mapper output")
        if self.d_topology.output_dim != 1 or self.d_topology.output_activation != "sigmoid":
            raise ConfigError("discriminator must have a single sigmoid output")
        if self.m_topology.kind == "ffdnn" and self.m_topology.output_activation != "softmax":
            raise ConfigError("acoustic model needs a softmax output")

    @property
    def uses_f(self):
        return self.mode in ("fm", "afm", "sa-fm", "sa-afm")

    @property
    def uses_d(self):
        return self.mode in ("afm", "sa-afm", "disc")

    @property
    def uses_m(self):
        return self.mode in ("sa-fm", "sa-afm", "mc")


def paper_preset(**overrides) -> TrainingConfig:
    """Full-size topologies and the reported hyperparameters (lambda=60,
    lr=5e-7, momentum 0.5). The acoustic model here is the 2-layer
    feedforward stand-in scaled to 3012 senones."""
    base = dict(
        lam=60.0, lr=5e-7, momentum=0.5,
        f_topology=LstmpTopology(87, 2, 512, 256, 29),
        d_topology=FfdnnTopology(29, 2, 512, 1, "sigmoid"),
        m_topology=FfdnnTopology(29, 7, 2048, 3012, "softmax"),
    )
    base.update(overrides)
    return TrainingConfig(**base)


@dataclass
class TrainRun:
    config: TrainingConfig
    history: List[LossBreakdown]
    networks: Dict[str, NetworkParams]
    optimizers: Dict[str, ad.OptimizerState]
    wall_clock: float = 0.0
    records: List[str] = field(default_factory=list)

    @property
    def seed(self):
        return self.config.seed

    def checkpoint(self, name: str) -> Checkpoint:
        return Checkpoint(self.networks[name], self.optimizers.get(name))

    @property
    def checkpoints(self) -> Dict[str, Checkpoint]:
        return {k: self.checkpoint(k) for k in self.networks}


def _rng(seed: int, role: str):
    return np.random.default_rng(np.random.SeedSequence([seed, _STREAMS[role]]))


def _dtype(cfg):
    return np.float32 if cfg.dtype == "float32" else np.float64


def _as(x: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype))


def _check_corpus(utts: Sequence[ParallelUtterance], cfg: TrainingConfig):
    if not utts:
        raise DataError("training corpus is empty")
    for u in utts:
        if u.noisy.stage != Stage.NORMALIZED or u.clean.stage != Stage.NORMALIZED:
            raise StageError(f"{u.id}: training expects normalized features")
        if cfg.uses_f and u.noisy.dims != cfg.f_topology.input_dim:
            raise ShapeError(f"{u.id}: noisy dims {u.noisy.dims} != F input {cfg.f_topology.input_dim}")
        if u.clean.dims != cfg.f_topology.output_dim:
            raise ShapeError(f"{u.id}: clean dims {u.clean.dims} != F output {cfg.f_topology.output_dim}")
        if cfg.uses_m and u.labels is None:
            raise DataError(f"{u.id}: senone labels required for mode {cfg.mode}")
        if cfg.uses_m and u.labels.max() >= cfg.m_topology.output_dim:
            raise DataError(f"{u.id}: label exceeds acoustic model outputs")


def _init_networks(cfg: TrainingConfig, init: Optional[Dict[str, NetworkParams]]):
    dtype = _dtype(cfg)
    init = init or {}
    nets = {}
    wanted = [("f", cfg.f_topology, cfg.uses_f), ("d", cfg.d_topology, cfg.uses_d),
              ("m", cfg.m_topology, cfg.uses_m)]
    for name, top, used in wanted:
        if not used:
            continue
        if name in init:
            p = init[name].astype(dtype)
            if p.topology != top:
                raise ShapeError(f"warm-start {name}: topology {p.topology} != configured {top}")
        else:
            p = init_params(top, _rng(cfg.seed, name), dtype=dtype)
        p.set_trainable(True)
        nets[name] = p
    if "m" in nets and cfg.freeze_m:
        nets["m"].set_trainable(False)
    return nets


# ----------------------------------------------------------------------------
# per-utterance objective


def utterance_terms(nets: Dict[str, NetworkParams], cfg: TrainingConfig, x, y,
                    labels=None, m_input=None):
    """Build the mode's loss terms for one utterance on the active tape.

    Returns ``(objective, l_f, l_d, l_m)``; absent terms are None. The
    objective is what :func:`afm.autodiff.backward` differentiates.
    """
    l_f = l_d = l_m = None
    terms = []
    y_hat = None
    if "f" in nets:
        y_hat = lstmp_forward(nets["f"], x)
        l_f = feature_mapping_loss(y_hat, y)
        terms.append(l_f)
    if "d" in nets:
        T = y.shape[0]
        if cfg.mode == "disc":
            fake = y_hat if y_hat is not None else m_input
        else:
            fake = ad.grl(y_hat, cfg.lam)
        scores = ffdnn_forward(nets["d"], ad.concat([fake, y], axis=0))
        l_d = discrimination_loss(scores[T:], scores[:T])
        terms.append(l_d)
    if "m" in nets:
        if y_hat is not None:
            inp = ad.grad_scale(y_hat, cfg.lam2)
        else:
            inp = m_input
        post = forward(nets["m"], inp)
        l_m = senone_ce_loss(post, labels)
        terms.append(l_m)
    obj = terms[0]
    for t in terms[1:]:
        obj = ad.add(obj, t)
    return obj, l_f, l_d, l_m


def _examples(corpus: Corpus, utts, cfg):
    """(x, y, labels, m_input) tuples a training epoch iterates over."""
    dtype = _dtype(cfg)
    out = []
    for u in utts:
        x, y = _as(u.noisy.data, dtype), _as(u.clean.data, dtype)
        if cfg.mode == "mc":
            # multi-condition: clean and noisy renditions as separate examples
            out.append((None, y, u.labels, y))
            out.append((None, y, u.labels, _as(corpus.noisy_static(u), dtype)))
        else:
            out.append((x, y, u.labels, None))
    return out


def _corpus_breakdown(nets, cfg, examples) -> LossBreakdown:
    """Frame-weighted losses over ``examples`` with the current parameters."""
    sums = {"f": 0.0, "d": 0.0, "m": 0.0}
    frames = 0
    for x, y, labels, m_input in examples:
        _, l_f, l_d, l_m = utterance_terms(nets, cfg, x, y, labels, m_input)
        T = y.shape[0]
        frames += T
        for k, v in (("f", l_f), ("d", l_d), ("m", l_m)):
            if v is not None:
                sums[k] += T * float(v.item())
    mean = {k: v / frames for k, v in sums.items()}
    return LossBreakdown(
        l_f=mean["f"] if "f" in nets else None,
        l_d=mean["d"] if "d" in nets else None,
        l_m=mean["m"] if "m" in nets else None,
        frames=frames,
        lam1=cfg.lam if "d" in nets and cfg.mode != "disc" else 0.0,
        lam2=(cfg.lam2 if "f" in nets else 1.0) if "m" in nets else 0.0,
    )


def _optimizers(nets, cfg):
    lrs = {"f": cfg.lr, "d": cfg.lr if cfg.lr_d is None else cfg.lr_d,
           "m": cfg.lr if cfg.lr_m is None else cfg.lr_m}
    opts = {}
    for name, p in nets.items():
        trainable = {k: t for k, t in p.items() if t.requires_grad}
        if trainable:
            opts[name] = SGDMomentum(trainable, lrs[name], cfg.momentum)
    return opts


def train_step(nets, opts, cfg, x, y, labels=None, m_input=None):
    for opt in opts.values():
        opt.zero_grad()
    with Tape() as tape:
        obj, *_ = utterance_terms(nets, cfg, x, y, labels, m_input)
    ad.backward(tape, obj)
    for opt in opts.values():
        opt.step()


def train(corpus: Corpus, config: TrainingConfig, init: Optional[Dict[str, NetworkParams]] = None,
          out_dir=None, utterances=None) -> TrainRun:
    """Train the networks the mode needs on the corpus's training split."""
    cfg = config
    utts = corpus.train if utterances is None else list(utterances)
    _check_corpus(utts, cfg)
    nets = _init_networks(cfg, init)
    if cfg.mode == "disc":
        if "f" not in (init or {}):
            raise ConfigError("discriminator-only training needs a frozen feature mapper")
        nets["f"] = init["f"].astype(_dtype(cfg))
        nets["f"].set_trainable(False)
    opts = _optimizers(nets, cfg)
    examples = _examples(corpus, utts, cfg)
    shuffle = _rng(cfg.seed, "shuffle")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        logf = open(out / "train.log", "w")
    history, records = [], []
    t0 = time.perf_counter()
    try:
        for epoch in range(1, cfg.epochs + 1):
            for i in shuffle.permutation(len(examples)):
                train_step(nets, opts, cfg, *examples[i])
            bd = _corpus_breakdown(nets, cfg, examples)
            history.append(bd)
            rec = bd.record(epoch=epoch, mode=cfg.mode) + f" wall_clock={time.perf_counter() - t0:.3f}"
            records.append(rec)
            if epoch % max(cfg.log_interval, 1) == 0 or epoch == cfg.epochs:
                log.info(rec)
            if out is not None:
                logf.write(rec + "\n")
                logf.flush()
                if cfg.checkpoint_interval and epoch % cfg.checkpoint_interval == 0:
                    _save_networks(out, nets, opts, cfg, suffix=f".epoch{epoch:03d}")
    finally:
        if out is not None:
            logf.close()
    run = TrainRun(cfg, history, _saved_networks(nets, cfg),
                   {k: o.state for k, o in opts.items()}, time.perf_counter() - t0, records)
    if out is not None:
        _save_networks(out, nets, opts, cfg)
        if corpus.noisy_stats is not None:
            corpus.noisy_stats.save(out / NOISY_STATS)
            corpus.clean_stats.save(out / CLEAN_STATS)
    return run


def _saved_networks(nets, cfg):
    keep = dict(nets)
    if cfg.mode == "disc":
        keep.pop("f", None)
    return keep


def _save_networks(out: Path, nets, opts, cfg, suffix=""):
    for name, p in _saved_networks(nets, cfg).items():
        state = opts[name].state if name in opts else None
        ckpt_io.save(out / f"{name}{suffix}.ckpt", Checkpoint(p, state))


def train_fm(corpus, config: TrainingConfig, **kw) -> TrainRun:
    return train(corpus, replace(config, mode="fm"), **kw)


def train_afm(corpus, config: TrainingConfig, **kw) -> TrainRun:
    return train(corpus, replace(config, mode="afm"), **kw)


def train_saafm(corpus, config: TrainingConfig, **kw) -> TrainRun:
    """SA-AFM, or SA-FM when ``config.mode == 'sa-fm'``."""
    mode = config.mode if config.mode in ("sa-fm", "sa-afm") else "sa-afm"
    return train(corpus, replace(config, mode=mode), **kw)


def train_multicondition(corpus, config: TrainingConfig, **kw) -> TrainRun:
    """Acoustic model alone on pooled clean and noisy static features."""
    return train(corpus, replace(config, mode="mc"), **kw)


def train_discriminator(corpus, f_params: NetworkParams, config: TrainingConfig, **kw) -> TrainRun:
    """Post-hoc discriminator against a frozen feature mapper."""
    init = dict(kw.pop("init", None) or {}, f=f_params)
    return train(corpus, replace(config, mode="disc"), init=init, **kw)


# ----------------------------------------------------------------------------
# inference


def _params(model) -> NetworkParams:
    return model.params if isinstance(model, Checkpoint) else model


def enhance(f_model, noisy: FeatureMatrix) -> FeatureMatrix:
    """Enhanced, clean-normalized features ``F(x)``."""
    f = _params(f_model)
    if noisy.stage != Stage.NORMALIZED:
        raise StageError(f"enhance expects normalized input, got {noisy.stage.name}")
    if noisy.dims != f.topology.input_dim:
        raise ShapeError(f"enhance: input dims {noisy.dims} != F input {f.topology.input_dim}")
    x = noisy.data.astype(f["out.w"].dtype)
    return FeatureMatrix(lstmp_forward(f, x).data, Stage.NORMALIZED)


def decode_posteriors(f_model, m_model, noisy: FeatureMatrix) -> FeatureMatrix:
    f, m = _params(f_model), _params(m_model)
    if f.topology.output_dim != m.topology.input_dim:
        raise ShapeError(f"F output {f.topology.output_dim} does not feed M input {m.topology.input_dim}")
    y_hat = enhance(f, noisy)
    return FeatureMatrix(forward(m, y_hat.data).data, Stage.POSTERIOR)


def am_posteriors(m_model, feats: np.ndarray) -> FeatureMatrix:
    m = _params(m_model)
    return FeatureMatrix(forward(m, feats.astype(m["out.w"].dtype)).data, Stage.POSTERIOR)


def discriminator_scores(d_model, feats: np.ndarray) -> np.ndarray:
    d = _params(d_model)
    return ffdnn_forward(d, feats.astype(d["out.w"].dtype)).data[:, 0]
