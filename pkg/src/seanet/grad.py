"""Dense reverse-mode gradient engine for gated multilayer perceptrons.

Layers are plain weight/bias pairs with one of three activations. A forward
pass optionally applies a per-layer multiplicative gain to the activation
output (``z = g * act(W x + b)``) and records everything needed for the
backward pass on a single-use tape. The backward pass returns gradients with
respect to weights, biases, gains, and the network input; input gradients are
what make symbols trainable.

All arithmetic is float64. Inputs may be single vectors ``(n,)`` or batches
of row vectors ``(B, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

RELU = "relu"
SIGMOID = "sigmoid"
IDENTITY = "identity"
ACTIVATIONS = (RELU, SIGMOID, IDENTITY)


@dataclass
class DenseLayer:
    """Fully connected layer: ``act(weights @ x + biases)``.

    weights has shape (out, in); biases has shape (out,).
    """

    weights: np.ndarray
    biases: np.ndarray
    activation: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a 2-D (out, in) matrix")
        if self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"biases shape {self.biases.shape} does not match "
                f"out-size {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("layer parameters must be finite")

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]


def init_layer(in_size: int, out_size: int, activation: str,
               rng: np.random.Generator) -> DenseLayer:
    """Uniform init in +-1/sqrt(fan_in), zero biases."""
    bound = 1.0 / np.sqrt(in_size)
    w = rng.uniform(-bound, bound, size=(out_size, in_size))
    return DenseLayer(w, np.zeros(out_size), activation)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    neg = ~pos
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[neg])
    out[neg] = ex / (1.0 + ex)
    return out


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == RELU:
        return np.maximum(pre, 0.0)
    if activation == SIGMOID:
        return _sigmoid(pre)
    return pre


def _activation_grad(pre: np.ndarray, act: np.ndarray, activation: str) -> np.ndarray:
    if activation == RELU:
        return (pre > 0.0).astype(np.float64)
    if activation == SIGMOID:
        return act * (1.0 - act)
    return np.ones_like(pre)


@dataclass
class _LayerRecord:
    layer_input: np.ndarray
    pre: np.ndarray
    act: np.ndarray   # post-activation, before gains
    gain: np.ndarray | None


@dataclass
class Tape:
    """Single-use record of one forward pass."""

    records: list[_LayerRecord]
    signature: list[tuple[int, int, str]]
    single_input: bool
    consumed: bool = False

    def check(self, layers: Sequence[DenseLayer]) -> None:
        if self.consumed:
            raise ValueError("tape already consumed by a backward pass")
        sig = [(l.out_size, l.in_size, l.activation) for l in layers]
        if sig != self.signature:
            raise ValueError("tape does not match these layers")


@dataclass
class Gradients:
    """Per-layer parameter gradients plus input and gain gradients."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray
    gains: list[np.ndarray | None] = field(default_factory=list)


def forward(layers: Sequence[DenseLayer], x: np.ndarray,
            gains: Sequence[np.ndarray | None] | None = None,
            ) -> tuple[np.ndarray, Tape]:
    """Run the layer stack on ``x``, gating each layer's activation output.

    ``gains[i]`` multiplies layer i's post-activation output elementwise
    (``None`` leaves the layer ungated). Entries may be ``(out,)`` vectors or
    per-row ``(B, out)`` matrices for batched input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2):
        raise ValueError("input must be a vector or a batch of row vectors")
    if gains is not None and len(gains) != len(layers):
        raise ValueError(
            f"got {len(gains)} gain entries for {len(layers)} layers"
        )

    single = x.ndim == 1
    cur = x
    records = []
    for i, layer in enumerate(layers):
        if cur.shape[-1] != layer.in_size:
            raise ValueError(
                f"layer {i}: input width {cur.shape[-1]} != expected {layer.in_size}"
            )
        pre = cur @ layer.weights.T + layer.biases
        act = _activate(pre, layer.activation)
        g = None
        if gains is not None and gains[i] is not None:
            g = np.asarray(gains[i], dtype=np.float64)
            if g.shape[-1] != layer.out_size:
                raise ValueError(
                    f"layer {i}: gain width {g.shape[-1]} != out-size {layer.out_size}"
                )
        records.append(_LayerRecord(layer_input=cur, pre=pre, act=act, gain=g))
        cur = act if g is None else g * act

    sig = [(l.out_size, l.in_size, l.activation) for l in layers]
    return cur, Tape(records=records, signature=sig, single_input=single)


def backward(layers: Sequence[DenseLayer], tape: Tape, output_grad: np.ndarray,
             extra_output_grads: Sequence[np.ndarray | None] | None = None,
             ) -> Gradients:
    """Reverse pass over a tape, once.

    ``output_grad`` is the loss gradient at the final (gated) output.
    ``extra_output_grads[i]``, when given, is added to the gradient arriving
    at layer i's output; this is how gain gradients from a gated downstream
    network are routed back into the network that produced the gains.
    """
    tape.check(layers)
    if extra_output_grads is not None and len(extra_output_grads) != len(layers):
        raise ValueError("extra_output_grads length must match layer count")
    tape.consumed = True

    n = len(layers)
    w_grads: list[np.ndarray | None] = [None] * n
    b_grads: list[np.ndarray | None] = [None] * n
    g_grads: list[np.ndarray | None] = [None] * n

    flowing = np.asarray(output_grad, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        layer, rec = layers[i], tape.records[i]
        dz = flowing
        if extra_output_grads is not None and extra_output_grads[i] is not None:
            dz = dz + extra_output_grads[i]
        if dz.shape != rec.act.shape:
            raise ValueError(
                f"layer {i}: output grad shape {dz.shape} != {rec.act.shape}"
            )
        if rec.gain is not None:
            g_grads[i] = dz * rec.act
            dy = dz * rec.gain
        else:
            dy = dz
        dpre = dy * _activation_grad(rec.pre, rec.act, layer.activation)
        a = rec.layer_input
        if tape.single_input:
            w_grads[i] = np.outer(dpre, a)
            b_grads[i] = dpre
        else:
            w_grads[i] = dpre.T @ a
            b_grads[i] = dpre.sum(axis=0)
        flowing = dpre @ layer.weights

    return Gradients(weights=w_grads, biases=b_grads, input=flowing, gains=g_grads)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                               step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Independent of the reverse-mode path; used as the gradient oracle.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def _tree_map(fn, *trees):
    head = trees[0]
    if isinstance(head, np.ndarray):
        return fn(*trees)
    if isinstance(head, (list, tuple)):
        mapped = [_tree_map(fn, *parts) for parts in zip(*trees)]
        return type(head)(mapped)
    raise TypeError(f"unsupported parameter container {type(head)!r}")


def _check_shapes(p: np.ndarray, g: np.ndarray) -> None:
    if p.shape != g.shape:
        raise ValueError(f"parameter shape {p.shape} != gradient shape {g.shape}")


def sgd_step(params, grads, lr: float):
    """``p - lr * g`` elementwise over an array or nested list/tuple of arrays."""
    if lr <= 0:
        raise ValueError("lr must be positive")

    def step(p, g):
        _check_shapes(p, g)
        return p - lr * g

    return _tree_map(step, params, grads)


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    t: int
    m: object
    v: object


def adam_init(params) -> AdamState:
    zeros = _tree_map(lambda p: np.zeros_like(p), params)
    zeros2 = _tree_map(lambda p: np.zeros_like(p), params)
    return AdamState(t=0, m=zeros, v=zeros2)


def adam_step(state: AdamState, params, grads, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update; returns (params, state)."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    t = state.t + 1
    new_m = _tree_map(lambda m, g: (_check_shapes(m, g), beta1 * m + (1 - beta1) * g)[1],
                      state.m, grads)
    new_v = _tree_map(lambda v, g: beta2 * v + (1 - beta2) * g * g, state.v, grads)
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t

    def step(p, m, v):
        _check_shapes(p, m)
        return p - lr * (m / c1) / (np.sqrt(v / c2) + eps)

    new_params = _tree_map(step, params, new_m, new_v)
    return new_params, AdamState(t=t, m=new_m, v=new_v)


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray,
                          ) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its logit gradient.

    ``targets`` holds class indices. For a single logit vector the loss is
    not averaged; for a batch the loss (and gradient) is the batch mean.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = logits[None, :] if single else logits
    idx = np.atleast_1d(np.asarray(targets, dtype=np.intp))
    if idx.shape[0] != z.shape[0]:
        raise ValueError("targets length does not match logits rows")
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(z.shape[0])
    losses = -(shifted[rows, idx] - np.log(exp.sum(axis=1)))
    dlogits = probs.copy()
    dlogits[rows, idx] -= 1.0
    dlogits /= z.shape[0]
    loss = float(losses.mean())
    if not np.isfinite(loss):
        raise ValueError("non-finite cross-entropy loss")
    return loss, (dlogits[0] if single else dlogits)
