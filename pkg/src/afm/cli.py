"""Command-line entry point: ``afm <subcommand> ...``.

Exit status is 0 on success, 1 for usage or configuration errors and 2
for data, file-format or model errors. Log verbosity follows the
``AFM_LOG_LEVEL`` environment variable (error, info or debug).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from .config import Config, load_config, parse_config
from .corpus import NOISY_STATS, build_corpus, load_corpus
from .errors import AfmError, ConfigError
from .features import (CmvnStats, FeatureMatrix, Stage, add_deltas, apply_cmvn, extract_lfb,
                       read_features, read_wav, write_features)
from .losses import parse_record

log = logging.getLogger("afm")

USAGE_ERROR, DATA_ERROR = 1, 2
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; usage errors here are 1
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _setup_logging():
    level = os.environ.get("AFM_LOG_LEVEL", "error").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"AFM_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _config(path) -> Config:
    return load_config(path) if path else parse_config("")


def _emit(lines):
    for line in lines:
        print(line)


# ----------------------------------------------------------------------------
# subcommands


def cmd_synth_data(args):
    cfg = _config(args.config)
    corpus_cfg = cfg.corpus if args.seed is None else replace(cfg.corpus, seed=args.seed)
    corpus = build_corpus(corpus_cfg, out_dir=args.out)
    n_train, n_test = len(corpus.train), len(corpus.test)
    _emit([f"corpus dir={args.out} utterances={len(corpus.utterances)} train={n_train} "
           f"test={n_test} frames={sum(u.frames for u in corpus.utterances)}"])


def cmd_train(args):
    from .training import train
    cfg = _config(args.config)
    tcfg = replace(cfg.train, mode=args.mode)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    corpus = load_corpus(args.data)
    base = cfg.source.parent if cfg.source else Path.cwd()
    init = {name: ck.load(base / path).params for name, path in cfg.init.items()}
    run = train(corpus, tcfg, init=init or None, out_dir=args.out)
    _emit(run.records)


def _stats_near(model_path: Path, name: str, override=None) -> CmvnStats:
    path = Path(override) if override else model_path.parent / name
    if not path.exists():
        raise FileNotFoundError(f"CMVN statistics not found at {path}; pass --stats")
    return CmvnStats.load(path)


def _normalized_input(path: Path, model_path: Path, stats_path=None) -> FeatureMatrix:
    if path.suffix.lower() == ".wav":
        feats = add_deltas(extract_lfb(read_wav(path)))
    else:
        feats = read_features(path)
    if feats.stage == Stage.NORMALIZED:
        return feats
    if feats.stage == Stage.STATIC:
        feats = add_deltas(feats)
    return apply_cmvn(feats, _stats_near(model_path, NOISY_STATS, stats_path))


def cmd_enhance(args):
    from .training import enhance
    model = Path(args.model)
    f = ck.load(model)
    out = enhance(f, _normalized_input(Path(args.input), model, args.stats))
    write_features(args.out, FeatureMatrix(out.data, Stage.NORMALIZED))
    _emit([f"enhanced in={args.input} out={args.out} frames={out.frames} dims={out.dims}"])


def _model_file(model: Path, name: str) -> Path:
    path = model / f"{name}.ckpt" if model.is_dir() else model
    if not path.exists():
        raise FileNotFoundError(f"no {name} checkpoint at {path}")
    return path


def cmd_eval(args):
    from . import evaluation as ev
    if args.enhanced or args.reference:
        if not (args.enhanced and args.reference):
            raise UsageError("--enhanced and --reference go together")
        report = ev.eval_features(read_features(args.enhanced), read_features(args.reference))
        _emit(report.lines(per_utterance=args.per_utterance))
        return
    if not (args.model and args.data):
        raise UsageError("eval needs --model and --data (or --enhanced/--reference)")
    model = Path(args.model)
    corpus = load_corpus(args.data)
    split = None if args.split == "all" else args.split
    if args.mode == "enhancement":
        f = ck.load(_model_file(model, "f"))
        outputs = ev.enhanced_outputs(f, corpus, split)
        report = ev.eval_enhancement(f, corpus, split, outputs=outputs)
        if args.plot_dir:
            _plot_enhancement(args.plot_dir, corpus, outputs, model)
    elif args.mode == "discriminator":
        d = ck.load(_model_file(model, "d"))
        f = ck.load(Path(args.f_model) if args.f_model else _model_file(model, "f"))
        report = ev.EvalReport(disc_accuracy=ev.eval_discriminator(d, f, corpus, split),
                               frames=sum(u.frames for u in _split(corpus, split)))
    else:
        m = ck.load(_model_file(model, "m"))
        f_path = Path(args.f_model) if args.f_model else (model / "f.ckpt" if model.is_dir() else None)
        f = ck.load(f_path) if f_path is not None and f_path.exists() else None
        report = ev.EvalReport(frame_accuracy=ev.eval_frame_accuracy(f, m, corpus, split),
                               frames=sum(u.frames for u in _split(corpus, split)))
    if args.plot_dir and model.is_dir() and (model / "train.log").exists():
        from .plotting import plot_loss_history
        records = [parse_record(l) for l in (model / "train.log").read_text().splitlines() if l]
        plot_loss_history(records, Path(args.plot_dir) / "loss_history.png", title=model.name)
    _emit(report.lines(per_utterance=args.per_utterance))


def _split(corpus, split):
    return corpus.utterances if split is None else corpus.split(split)


def _plot_enhancement(plot_dir, corpus, outputs, model):
    from .plotting import plot_feature_moments
    series = {
        "clean": np.concatenate([u.clean.data for u, _ in outputs]),
        "noisy": np.concatenate([corpus.noisy_static(u) for u, _ in outputs]),
        "enhanced": np.concatenate([y for _, y in outputs]),
    }
    plot_feature_moments(series, Path(plot_dir) / "feature_moments.png")


def cmd_experiment(args):
    from . import experiments as ex
    from .plotting import plot_seed_comparison
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    for seed in seeds:
        if args.which == "enhancement":
            res = ex.run_enhancement(seed, out_dir=args.out)
            flags = f"ordering={int(res.ordering_holds)} adversarial={int(res.adversarial_holds)}"
        else:
            res = ex.run_senone(seed, out_dir=args.out)
            flags = f"ordering={int(res.ordering_holds)}"
        rec = res.record()
        rows.append(rec)
        print(" ".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in rec.items())
              + " " + flags, flush=True)
    if args.plot_dir:
        if args.which == "enhancement":
            plot_seed_comparison(rows, "mse", ["noisy", "fm", "afm"], Path(args.plot_dir) / "mse.png")
            plot_seed_comparison(rows, "distance", ["fm", "afm"],
                                 Path(args.plot_dir) / "distance.png")
        else:
            plot_seed_comparison(rows, "acc", ["mc", "safm", "saafm"],
                                 Path(args.plot_dir) / "frame_accuracy.png")


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="afm", description="Adversarial feature-mapping speech enhancement.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth-data", help="build a synthetic parallel corpus")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train", help="train networks on a corpus")
    s.add_argument("--mode", required=True, choices=["fm", "afm", "sa-fm", "sa-afm", "mc"])
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("enhance", help="run a feature mapper over one input")
    s.add_argument("--model", required=True, help="feature-mapper checkpoint")
    s.add_argument("--in", dest="input", required=True, help=".feat or .wav input")
    s.add_argument("--out", required=True)
    s.add_argument("--stats", help="noisy CMVN stats (default: next to the checkpoint)")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("eval", help="score checkpoints on a corpus")
    s.add_argument("--mode", choices=["enhancement", "discriminator", "frames"], default="enhancement")
    s.add_argument("--model", help="run directory or checkpoint")
    s.add_argument("--f-model", help="feature mapper checkpoint when --model is not a run directory")
    s.add_argument("--data")
    s.add_argument("--split", default="test", choices=["train", "test", "all"])
    s.add_argument("--enhanced", help="compare a feature file ...")
    s.add_argument("--reference", help="... against this one")
    s.add_argument("--per-utterance", action="store_true")
    s.add_argument("--plot-dir", help="write figures here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("experiment", help="comparative multi-seed runs")
    s.add_argument("which", choices=["enhancement", "senone"])
    s.add_argument("--seeds", default="0,1,2")
    s.add_argument("--out")
    s.add_argument("--plot-dir")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (AfmError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
