"""Symbol-gated agent: a sigmoid control network (CDP) maps a symbol to
per-layer gain vectors that gate a feedforward Yes/No classifier (TS).

Geometry convention: ``layer_sizes = [F, h1, h2, ...]`` gives a TS whose
feature layer is an identity pass-through of width F followed by ReLU hidden
layers of widths h1, h2, ... and an ungated 2-logit output. The CDP stacks
sigmoid layers symbol_len -> F -> h1 -> h2 ..., one per gated TS point, so
controlling and controlled widths match one-to-one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import grad
from .grad import DenseLayer, Gradients, Tape

YES = 1   # logit index of the "yes" unit; one-hot [0, 1]
NO = 0    # logit index of the "no" unit; one-hot [1, 0]

_MAGIC = b"SEA1"
_ACT_CODES = {grad.RELU: 0, grad.SIGMOID: 1, grad.IDENTITY: 2}
_CODE_ACTS = {v: k for k, v in _ACT_CODES.items()}


@dataclass
class CDPModule:
    """Control network: all-sigmoid stack producing gains in (0, 1)."""

    layers: list[DenseLayer]

    def __post_init__(self):
        for i, layer in enumerate(self.layers):
            if layer.activation != grad.SIGMOID:
                raise ValueError(f"CDP layer {i} must be sigmoid")

    @property
    def symbol_len(self) -> int:
        return self.layers[0].in_size

    @property
    def gain_widths(self) -> list[int]:
        return [l.out_size for l in self.layers]


@dataclass
class TSClassifier:
    """Task network: gated identity feature layer, ReLU hidden stack,
    ungated 2-logit output."""

    feature_dim: int
    layers: list[DenseLayer]

    def __post_init__(self):
        if self.layers[-1].out_size != 2:
            raise ValueError("TS output layer must have exactly 2 logits")
        if self.layers[0].in_size != self.feature_dim:
            raise ValueError("first TS layer must consume the feature vector")

    @property
    def gated_widths(self) -> list[int]:
        # identity feature layer plus every hidden layer; output stays ungated
        return [self.feature_dim] + [l.out_size for l in self.layers[:-1]]


@dataclass
class Agent:
    """A gated network plus its class -> symbol association."""

    cdp: CDPModule
    ts: TSClassifier
    bank: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.cdp.gain_widths != self.ts.gated_widths:
            raise ValueError(
                f"CDP widths {self.cdp.gain_widths} do not match gated TS "
                f"widths {self.ts.gated_widths}"
            )
        for cid, s in self.bank.items():
            self.bank[cid] = _check_symbol(s, self.symbol_len)

    @property
    def symbol_len(self) -> int:
        return self.cdp.symbol_len

    @property
    def feature_dim(self) -> int:
        return self.ts.feature_dim

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays, CDP first then TS, weights before biases."""
        arrays = []
        for layer in self.cdp.layers + self.ts.layers:
            arrays.append(layer.weights)
            arrays.append(layer.biases)
        return arrays

    def set_parameters(self, arrays: list[np.ndarray]) -> None:
        layers = self.cdp.layers + self.ts.layers
        if len(arrays) != 2 * len(layers):
            raise ValueError("parameter list length mismatch")
        for i, layer in enumerate(layers):
            layer.weights = arrays[2 * i]
            layer.biases = arrays[2 * i + 1]


def _check_symbol(s: np.ndarray, length: int) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (length,):
        raise ValueError(f"symbol shape {s.shape} != ({length},)")
    if not np.isfinite(s).all():
        raise ValueError("symbol entries must be finite")
    return s


def create_agent(feature_dim: int, layer_sizes: tuple[int, ...],
                 symbol_len: int, rng: np.random.Generator,
                 class_ids: tuple[int, ...] = ()) -> Agent:
    """Build a fresh agent of the given geometry with a random symbol bank.

    ``layer_sizes[0]`` must equal ``feature_dim`` (the identity feature
    layer); remaining entries are hidden widths.
    """
    if layer_sizes[0] != feature_dim:
        raise ValueError("layer_sizes[0] must equal feature_dim")
    cdp_layers = []
    prev = symbol_len
    for width in layer_sizes:
        cdp_layers.append(grad.init_layer(prev, width, grad.SIGMOID, rng))
        prev = width
    ts_layers = []
    prev = feature_dim
    for width in layer_sizes[1:]:
        ts_layers.append(grad.init_layer(prev, width, grad.RELU, rng))
        prev = width
    ts_layers.append(grad.init_layer(prev, 2, grad.IDENTITY, rng))
    bank = init_bank(class_ids, symbol_len, rng)
    return Agent(CDPModule(cdp_layers), TSClassifier(feature_dim, ts_layers), bank)


def init_bank(class_ids, symbol_len: int, rng: np.random.Generator,
              ) -> dict[int, np.ndarray]:
    """Random starting symbols, one uniform(-1, 1) vector per class."""
    return {int(c): rng.uniform(-1.0, 1.0, size=symbol_len) for c in class_ids}


def cdp_forward(cdp: CDPModule, symbol: np.ndarray,
                ) -> tuple[list[np.ndarray], Tape]:
    """Map a symbol (or batch of symbols) to one gain vector per gated layer."""
    symbol = np.asarray(symbol, dtype=np.float64)
    if symbol.shape[-1] != cdp.symbol_len:
        raise ValueError(
            f"symbol length {symbol.shape[-1]} != expected {cdp.symbol_len}"
        )
    _, tape = grad.forward(cdp.layers, symbol)
    gains = [rec.act for rec in tape.records]
    return gains, tape


@dataclass
class JointTape:
    """Forward record spanning the CDP and TS passes of one evaluation."""

    cdp_tape: Tape
    ts_tape: Tape
    features: np.ndarray
    feature_gain: np.ndarray


def sea_forward(agent: Agent, symbol: np.ndarray, features: np.ndarray,
                ) -> tuple[np.ndarray, JointTape]:
    """Gated evaluation of features under a symbol; returns 2 logits.

    Accepts single vectors or aligned batches (rows pair up).
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != agent.feature_dim:
        raise ValueError(
            f"feature length {features.shape[-1]} != expected {agent.feature_dim}"
        )
    gains, cdp_tape = cdp_forward(agent.cdp, symbol)
    gated = gains[0] * features
    ts_gains = list(gains[1:]) + [None]
    logits, ts_tape = grad.forward(agent.ts.layers, gated, ts_gains)
    return logits, JointTape(cdp_tape, ts_tape, features, gains[0])


def sea_backward(agent: Agent, tape: JointTape, logit_grad: np.ndarray,
                 ) -> tuple[Gradients, Gradients, np.ndarray]:
    """Backward through TS and CDP jointly.

    Returns (cdp_grads, ts_grads, symbol_grad). TS gain gradients and the
    gradient at the gated feature layer are routed into the CDP pass as
    per-layer output gradients; the CDP input gradient is the symbol
    gradient.
    """
    ts_grads = grad.backward(agent.ts.layers, tape.ts_tape, logit_grad)
    feature_gain_grad = ts_grads.input * tape.features
    extra = [feature_gain_grad] + list(ts_grads.gains[:-1])
    zero_out = np.zeros_like(tape.cdp_tape.records[-1].act)
    cdp_grads = grad.backward(agent.cdp.layers, tape.cdp_tape, zero_out,
                              extra_output_grads=extra)
    return cdp_grads, ts_grads, cdp_grads.input


def decide(logits: np.ndarray) -> int:
    """YES iff the yes-logit strictly exceeds the no-logit; ties are NO."""
    logits = np.asarray(logits)
    if logits.shape != (2,):
        raise ValueError("decide expects exactly 2 logits")
    return YES if logits[1] > logits[0] else NO


def decide_batch(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ValueError("expected an (n, 2) logit matrix")
    return (logits[:, 1] > logits[:, 0]).astype(np.intp)


# --- serialization ---------------------------------------------------------

def _pack_layer_header(layer: DenseLayer) -> bytes:
    return struct.pack("<III", layer.out_size, layer.in_size,
                       _ACT_CODES[layer.activation])


def save_agent(agent: Agent, path) -> None:
    """Write the self-describing binary agent file (magic ``SEA1``)."""
    chunks = [_MAGIC]
    chunks.append(struct.pack("<IIII", agent.symbol_len, agent.feature_dim,
                              len(agent.cdp.layers), len(agent.ts.layers)))
    for layer in agent.cdp.layers + agent.ts.layers:
        chunks.append(_pack_layer_header(layer))
    for layer in agent.cdp.layers + agent.ts.layers:
        chunks.append(layer.weights.astype("<f8", copy=False).tobytes())
        chunks.append(layer.biases.astype("<f8", copy=False).tobytes())
    chunks.append(struct.pack("<I", len(agent.bank)))
    for cid in sorted(agent.bank):
        chunks.append(struct.pack("<I", cid))
        chunks.append(agent.bank[cid].astype("<f8", copy=False).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise ValueError(
                f"truncated agent file: wanted {n} bytes at offset {self.off}"
            )
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def f64_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(8 * n)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def load_agent(path) -> Agent:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != _MAGIC:
        raise ValueError("bad magic at offset 0: not an agent file")
    symbol_len, feature_dim, n_cdp, n_ts = reader.u32(4)
    headers = []
    for _ in range(n_cdp + n_ts):
        out_size, in_size, code = reader.u32(3)
        if code not in _CODE_ACTS:
            raise ValueError(f"unknown activation code {code} at offset {reader.off - 4}")
        headers.append((out_size, in_size, _CODE_ACTS[code]))
    layers = []
    for out_size, in_size, act in headers:
        w = reader.f64_array((out_size, in_size))
        b = reader.f64_array((out_size,))
        layers.append(DenseLayer(w, b, act))
    bank = {}
    count = reader.u32()
    for _ in range(count):
        cid = reader.u32()
        if cid in bank:
            raise ValueError(f"duplicate class id {cid} at offset {reader.off - 4}")
        bank[cid] = reader.f64_array((symbol_len,))
    if reader.off != len(reader.buf):
        raise ValueError(f"trailing bytes at offset {reader.off}")
    agent = Agent(CDPModule(layers[:n_cdp]),
                  TSClassifier(feature_dim, layers[n_cdp:]), bank)
    if agent.symbol_len != symbol_len:
        raise ValueError("symbol length header does not match CDP geometry")
    return agent
