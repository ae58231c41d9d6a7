"""Feature-mapping LSTMP, feedforward discriminator / acoustic model.

Parameter naming is stable and doubles as the on-disk tensor name:

* LSTMP layer ``l``: ``lstm{l}.w_x`` (in x 4H), ``lstm{l}.w_r`` (P x 4H),
  ``lstm{l}.b`` (4H), ``lstm{l}.w_p`` (H x P); gate blocks ordered i, f, o, g.
  Output layer: ``out.w`` (P x out), ``out.b``.
* FFDNN layer ``l``: ``fc{l}.w``, ``fc{l}.b``; output ``out.w``, ``out.b``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterator, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, FormatError, ShapeError


@dataclass(frozen=True)
class LstmpTopology:
    input_dim: int
    num_layers: int
    cell_units: int
    projection_dim: int
    output_dim: int

    kind = "lstmp"

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"lstmp topology: {f.name} must be positive")
        if self.projection_dim > self.cell_units:
            raise ConfigError("lstmp topology: projection_dim must not exceed cell_units")

    def shapes(self) -> Dict[str, tuple]:
        H, P = self.cell_units, self.projection_dim
        out = {}
        d_in = self.input_dim
        for l in range(self.num_layers):
            out[f"lstm{l}.w_x"] = (d_in, 4 * H)
            out[f"lstm{l}.w_r"] = (P, 4 * H)
            out[f"lstm{l}.b"] = (4 * H,)
            out[f"lstm{l}.w_p"] = (H, P)
            d_in = P
        out["out.w"] = (P, self.output_dim)
        out["out.b"] = (self.output_dim,)
        return out

    def parameter_count(self) -> int:
        """Closed form: per layer 4H(in + P + 1) + HP, plus P*out + out."""
        H, P = self.cell_units, self.projection_dim
        n, d_in = 0, self.input_dim
        for _ in range(self.num_layers):
            n += 4 * H * (d_in + P + 1) + H * P
            d_in = P
        return n + P * self.output_dim + self.output_dim


@dataclass(frozen=True)
class FfdnnTopology:
    input_dim: int
    hidden_layers: int
    hidden_units: int
    output_dim: int
    output_activation: str = "sigmoid"
    hidden_activation: str = "sigmoid"

    kind = "ffdnn"

    def __post_init__(self):
        for name in ("input_dim", "hidden_units", "output_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"ffdnn topology: {name} must be positive")
        if self.hidden_layers < 0:
            raise ConfigError("ffdnn topology: hidden_layers must be >= 0")
        if self.output_activation not in ("sigmoid", "softmax"):
            raise ConfigError(f"unknown output activation {self.output_activation!r}")
        if self.hidden_activation not in ("sigmoid", "relu", "tanh"):
            raise ConfigError(f"unknown hidden activation {self.hidden_activation!r}")

    def shapes(self) -> Dict[str, tuple]:
        out = {}
        d_in = self.input_dim
        for l in range(self.hidden_layers):
            out[f"fc{l}.w"] = (d_in, self.hidden_units)
            out[f"fc{l}.b"] = (self.hidden_units,)
            d_in = self.hidden_units
        out["out.w"] = (d_in, self.output_dim)
        out["out.b"] = (self.output_dim,)
        return out

    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())


Topology = Union[LstmpTopology, FfdnnTopology]


def topology_descriptor(top: Topology) -> str:
    """Canonical ``key=value`` lines, keys sorted, ``kind`` included."""
    items = dict(asdict(top), kind=top.kind)
    return "".join(f"{k}={items[k]}\n" for k in sorted(items))


def parse_descriptor(text: str) -> Topology:
    kv = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"bad descriptor line {line!r}")
        kv[key] = value
    kind = kv.pop("kind", None)
    cls = {"lstmp": LstmpTopology, "ffdnn": FfdnnTopology}.get(kind)
    if cls is None:
        raise FormatError(f"unknown topology kind {kind!r}")
    names = {f.name: f.type for f in fields(cls)}
    if set(kv) - set(names):
        raise FormatError(f"unexpected descriptor keys {sorted(set(kv) - set(names))}")
    args = {k: (v if names[k] == "str" else int(v)) for k, v in kv.items()}
    return cls(**args)


class NetworkParams:
    """Named parameter tensors for one topology."""

    def __init__(self, topology: Topology, tensors: Dict[str, Tensor]):
        expected = topology.shapes()
        if list(tensors) != list(expected):
            missing = set(expected) ^ set(tensors)
            if missing:
                raise ShapeError(f"parameter names do not match topology: {sorted(missing)}")
            tensors = {k: tensors[k] for k in expected}
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
            tensors[name].name = name
        self.topology = topology
        self.tensors = tensors

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.topology, {
            k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self.items()
        })

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(self.topology, {
            k: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad) for k, t in self.items()
        })

    def set_trainable(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag
            t.grad = None

    def equal(self, other: "NetworkParams") -> bool:
        return (self.topology == other.topology
                and all(np.array_equal(self[k].data, other[k].data) for k in self))


def init_params(topology: Topology, seed, dtype=np.float64) -> NetworkParams:
    """Uniform Glorot weights, zero biases, LSTM forget-gate bias 1."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tensors = {}
    for name, shape in topology.shapes().items():
        if len(shape) == 1:
            data = np.zeros(shape, dtype=dtype)
            if name.startswith("lstm"):
                H = shape[0] // 4
                data[H:2 * H] = 1.0
        else:
            r = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-r, r, size=shape).astype(dtype)
        tensors[name] = Tensor(data, requires_grad=True)
    return NetworkParams(topology, tensors)


def _input(x) -> Tensor:
    data = getattr(x, "data", x)
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(data))


def lstmp_forward(params: NetworkParams, x) -> Tensor:
    """Run the projected LSTM over a T x input_dim sequence; returns T x output_dim.

    State starts at zero. Every frame is unrolled on the active tape, so
    :func:`afm.autodiff.backward` performs full backpropagation through time.
    """
    top = params.topology
    x = _input(x)
    if x.data.ndim != 2 or x.shape[1] != top.input_dim:
        raise ShapeError(f"lstmp_forward: expected T x {top.input_dim} input, got {x.shape}")
    T = x.shape[0]
    H = top.cell_units
    layer_in = x
    for l in range(top.num_layers):
        w_r, w_p = params[f"lstm{l}.w_r"], params[f"lstm{l}.w_p"]
        xw = ad.add(ad.matmul(layer_in, params[f"lstm{l}.w_x"]), params[f"lstm{l}.b"])
        r = c = None
        outs = []
        for t in range(T):
            z = xw[t:t + 1]
            if r is not None:
                z = ad.add(z, ad.matmul(r, w_r))
            gates = ad.sigmoid(z[:, :3 * H])
            i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:]
            g = ad.tanh(z[:, 3 * H:])
            c = ad.mul(i, g) if c is None else ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
            r = ad.matmul(h, w_p)
            outs.append(r)
        layer_in = ad.concat(outs, axis=0)
    return ad.add(ad.matmul(layer_in, params["out.w"]), params["out.b"])


_ACT = {"sigmoid": ad.sigmoid, "relu": ad.relu, "tanh": ad.tanh}


def ffdnn_forward(params: NetworkParams, x) -> Tensor:
    """Frame-wise feedforward net; sigmoid head gives T x 1 probabilities,
    softmax head gives T x K posteriors."""
    top = params.topology
    x = _input(x)
    if x.data.ndim != 2 or x.shape[1] != top.input_dim:
        raise ShapeError(f"ffdnn_forward: expected T x {top.input_dim} input, got {x.shape}")
    act = _ACT[top.hidden_activation]
    h = x
    for l in range(top.hidden_layers):
        h = act(ad.add(ad.matmul(h, params[f"fc{l}.w"]), params[f"fc{l}.b"]))
    logits = ad.add(ad.matmul(h, params["out.w"]), params["out.b"])
    if top.output_activation == "softmax":
        return ad.softmax(logits)
    return ad.sigmoid(logits)


def forward(params: NetworkParams, x) -> Tensor:
    if params.topology.kind == "lstmp":
        return lstmp_forward(params, x)
    return ffdnn_forward(params, x)
