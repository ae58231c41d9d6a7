"""INI configuration files.

Sections: ``[corpus]``, ``[train]``, ``[f]``, ``[d]``, ``[m]``. Every key is
checked against the dataclass it feeds; unknown sections or keys are
errors so a typo in a hyperparameter cannot pass silently.
"""
from __future__ import annotations

import configparser
import dataclasses
import typing
from pathlib import Path
from typing import Optional

from .corpus import CorpusConfig
from .errors import ConfigError
from .networks import FfdnnTopology, LstmpTopology
from .training import TrainingConfig

_TRAIN_EXTRA = {"init_f", "init_d", "init_m"}
_TOPOLOGY_KEYS = {"f": "f_topology", "d": "d_topology", "m": "m_topology"}


@dataclasses.dataclass
class Config:
    corpus: CorpusConfig
    train: TrainingConfig
    init: dict  # network name -> checkpoint path
    source: Optional[Path] = None


def _convert(raw: str, typ, key):
    typ = str(typ)
    try:
        if "bool" in typ:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "tuple" in typ:
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if "float" in typ:
            return float(raw)
        if "int" in typ:
            return int(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None


def _fields(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _section(cp, name, cls, skip=()):
    if not cp.has_section(name):
        return {}
    allowed = _fields(cls)
    out = {}
    for key, raw in cp.items(name):
        if key in skip:
            continue
        if key not in allowed:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _convert(raw, allowed[key], f"[{name}] {key}")
    return out


def _topology(cp, name, default):
    if not cp.has_section(name):
        return default
    kind = cp.get(name, "kind", fallback=default.kind)
    cls = {"lstmp": LstmpTopology, "ffdnn": FfdnnTopology}.get(kind)
    if cls is None:
        raise ConfigError(f"[{name}] unknown kind {kind!r}")
    base = dataclasses.asdict(default) if kind == default.kind else {}
    base.update(_section(cp, name, cls, skip=("kind",)))
    try:
        return cls(**base)
    except TypeError as exc:
        raise ConfigError(f"[{name}] incomplete topology: {exc}") from None


def parse_config(text: str, source=None) -> Config:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=str(source or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(cp.sections()) - {"corpus", "train", "f", "d", "m"}
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
    corpus = CorpusConfig(**_section(cp, "corpus", CorpusConfig))
    train_kv = _section(cp, "train", TrainingConfig, skip=_TRAIN_EXTRA)
    for key in _TOPOLOGY_KEYS.values():
        if key in train_kv:
            raise ConfigError(f"[train] {key} belongs in its own section")
    defaults = TrainingConfig()
    # acoustic model output follows the phone inventory by default
    m_default = dataclasses.replace(defaults.m_topology, output_dim=corpus.num_phones)
    train_kv["m_topology"] = m_default
    for sec, key in _TOPOLOGY_KEYS.items():
        if cp.has_section(sec):
            base = m_default if sec == "m" else getattr(defaults, key)
            train_kv[key] = _topology(cp, sec, base)
    train = TrainingConfig(**train_kv)
    init = {k[len("init_"):]: cp.get("train", k) for k in _TRAIN_EXTRA
            if cp.has_section("train") and cp.has_option("train", k)}
    return Config(corpus, train, init, Path(source) if source else None)


def load_config(path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=path)
