"""Few-shot acquisition of a new class by optimizing its symbol alone.

The network stays frozen; a randomly initialized symbol descends a combined
objective: cross-entropy toward YES on a couple of new-class images,
weighted cross-entropy toward NO on one exemplar per learned class, and a
repelling penalty that keeps the new symbol away from the learned ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grad, network
from .data import FeatureDataset
from .network import NO, YES, Agent


@dataclass
class SymbolicHyper:
    alpha: float = 0.5
    beta: float = 0.001
    tau: float = 0.01
    lr: float = 0.01
    epochs: int = 1000

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.lr <= 0 or self.epochs < 1:
            raise ValueError("lr must be positive and epochs at least 1")


@dataclass
class FewShotSample:
    """Exactly two new-class feature rows plus one exemplar per old class."""

    new_images: np.ndarray
    old_exemplars: dict[int, np.ndarray]

    def __post_init__(self):
        self.new_images = np.asarray(self.new_images, dtype=np.float64)
        if self.new_images.ndim != 2 or self.new_images.shape[0] != 2:
            raise ValueError("need exactly 2 new-class rows")
        self.old_exemplars = {int(c): np.asarray(v, dtype=np.float64)
                              for c, v in self.old_exemplars.items()}


def repelling_loss(s: np.ndarray, anchors: dict[int, np.ndarray],
                   tau: float) -> float:
    """Sum over anchors of exp(-||S_i - s||^2 / tau); 0 for an empty bank."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    s = np.asarray(s, dtype=np.float64)
    total = 0.0
    for v in anchors.values():
        if v.shape != s.shape:
            raise ValueError("anchor/symbol length mismatch")
        diff = v - s
        total += float(np.exp(-float(diff @ diff) / tau))
    return total


def _repelling_grad(s: np.ndarray, anchors: dict[int, np.ndarray],
                    tau: float) -> np.ndarray:
    g = np.zeros_like(s)
    for v in anchors.values():
        diff = s - v
        g += np.exp(-float(diff @ diff) / tau) * (-2.0 / tau) * diff
    return g


def _ce_symbol_grad(agent: Agent, s: np.ndarray, x: np.ndarray, target: int,
                    ) -> tuple[float, np.ndarray]:
    # Mean cross-entropy over the rows of x, all fed with the same symbol.
    tiled = np.tile(s, (x.shape[0], 1))
    logits, tape = network.sea_forward(agent, tiled, x)
    targets = np.full(x.shape[0], target, dtype=np.intp)
    loss, dlogits = grad.softmax_cross_entropy(logits, targets)
    _, _, sym_grad = network.sea_backward(agent, tape, dlogits)
    return loss, sym_grad.sum(axis=0)


def combined_loss(agent: Agent, s: np.ndarray, few_shot: FewShotSample,
                  hyper: SymbolicHyper, anchor_classes=None,
                  ) -> tuple[float, np.ndarray]:
    """Evaluate the three-term objective and its gradient w.r.t. the symbol.

    The anchors (and the required exemplar set) default to every class in
    the agent's bank; pass ``anchor_classes`` to restrict them, e.g. when
    re-deriving variants for an already-learned class.
    """
    s = np.asarray(s, dtype=np.float64)
    if anchor_classes is None:
        anchor_classes = sorted(agent.bank)
    anchors = {c: agent.bank[c] for c in anchor_classes}
    if set(few_shot.old_exemplars) != set(anchors):
        raise ValueError("need exactly one exemplar per anchor class")

    loss_new, grad_new = _ce_symbol_grad(agent, s, few_shot.new_images, YES)
    old = np.stack([few_shot.old_exemplars[c] for c in sorted(anchors)])
    loss_old, grad_old = _ce_symbol_grad(agent, s, old, NO)
    rep = repelling_loss(s, anchors, hyper.tau)
    total = loss_new + hyper.alpha * loss_old + hyper.beta * rep
    if not np.isfinite(total):
        raise ValueError("non-finite combined loss")
    symbol_grad = (grad_new + hyper.alpha * grad_old
                   + hyper.beta * _repelling_grad(s, anchors, hyper.tau))
    return float(total), symbol_grad


def bank_envelope(bank: dict[int, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-element (min, max) over the bank's symbols."""
    if not bank:
        raise ValueError("empty symbol bank")
    mat = np.stack(list(bank.values()))
    return mat.min(axis=0), mat.max(axis=0)


def infer_symbol(agent: Agent, few_shot: FewShotSample, hyper: SymbolicHyper,
                 rng: np.random.Generator, anchor_classes=None,
                 ) -> tuple[np.ndarray, float]:
    """Plain gradient descent on a symbol against the frozen network.

    The start point is uniform over the bank's per-element envelope. No
    noise is injected. Network parameters are asserted bit-unchanged.
    """
    params_before = [a.copy() for a in agent.parameters()]
    lo, hi = bank_envelope(agent.bank)
    s = rng.uniform(lo, hi)
    loss = None
    for epoch in range(hyper.epochs):
        loss, g = combined_loss(agent, s, few_shot, hyper, anchor_classes)
        s = s - hyper.lr * g
        if not np.isfinite(s).all():
            raise ValueError(f"symbol diverged at epoch {epoch} (loss {loss})")
    loss, _ = combined_loss(agent, s, few_shot, hyper, anchor_classes)
    for before, after in zip(params_before, agent.parameters()):
        if not np.array_equal(before, after):
            raise AssertionError("symbol inference modified network parameters")
    return s, loss


def sample_few_shot(dataset: FeatureDataset, new_class: int, old_classes,
                    rng: np.random.Generator) -> FewShotSample:
    """Draw 2 train rows of the new class and 1 per old class."""
    new_rows = dataset.rows(new_class, test=False)
    if new_rows.shape[0] < 2:
        raise ValueError(f"class {new_class} has fewer than 2 train rows")
    pick = rng.choice(new_rows.shape[0], size=2, replace=False)
    exemplars = {}
    for c in old_classes:
        rows = dataset.rows(c, test=False)
        if rows.shape[0] == 0:
            raise ValueError(f"class {c} has no train rows")
        exemplars[int(c)] = rows[rng.integers(0, rows.shape[0])]
    return FewShotSample(new_rows[pick], exemplars)


def extend_symbol_set(agent: Agent, dataset: FeatureDataset, class_id: int,
                      count: int = 96, epochs: int = 1000,
                      rng: np.random.Generator | None = None,
                      hyper: SymbolicHyper | None = None) -> list[np.ndarray]:
    """Derive ``count`` additional symbols for an already-learned class.

    Each variant restarts the symbol optimization from a fresh random init
    with fresh few-shot draws, treating ``class_id`` as the new class and
    every other bank class as learned.
    """
    if class_id not in agent.bank:
        raise ValueError(f"class {class_id} not in bank")
    if rng is None:
        raise ValueError("rng is required")
    if hyper is None:
        hyper = SymbolicHyper(epochs=epochs)
    else:
        hyper = SymbolicHyper(alpha=hyper.alpha, beta=hyper.beta, tau=hyper.tau,
                              lr=hyper.lr, epochs=epochs)
    others = [c for c in sorted(agent.bank) if c != class_id]
    out = []
    for _ in range(count):
        few = sample_few_shot(dataset, class_id, others, rng)
        s, _ = infer_symbol(agent, few, hyper, rng, anchor_classes=others)
        out.append(s)
    return out
