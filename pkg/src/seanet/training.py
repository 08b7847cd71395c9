"""Alternating two-phase training.

Network-phase epochs update CDP and TS parameters with symbols fixed;
symbol-phase epochs update bank symbols with parameters fixed. Batches pair
each feature row with either its class's symbol (target YES) or, with
probability p drawn per batch, another class's symbol (target NO). Uniform
noise perturbs the fed symbols during both phases, never at evaluation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import grad, network
from .data import FeatureDataset
from .network import NO, YES, Agent

OPTIMIZERS = ("sgd", "adam")


@dataclass
class TrainConfig:
    epochs: int = 2000
    lr_net: float = 1e-4
    lr_symbol: float = 1e-4
    noise_amp: float = 0.1
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "sgd"
    negative_p: float | None = None   # None = resample uniformly per batch
    eval_every: int = 10

    def __post_init__(self):
        if self.epochs < 2:
            raise ValueError("epochs must be at least 2 (one of each phase)")
        if self.lr_net <= 0 or self.lr_symbol <= 0:
            raise ValueError("learning rates must be positive")
        if self.noise_amp < 0:
            raise ValueError("noise_amp must be nonnegative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")


@dataclass
class NegativeSamplingPolicy:
    """Per-batch probability of pairing a sample with a false symbol.

    ``p=None`` resamples p uniformly in [0, 1] for every batch.
    """

    p: float | None = None

    def __post_init__(self):
        if self.p is not None and not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")

    def draw(self, rng: np.random.Generator) -> float:
        return float(rng.uniform()) if self.p is None else self.p


@dataclass
class LabeledPair:
    """One training example: features plus the (clean) symbol actually fed.

    ``symbol_class`` records whose symbol it is, so symbol-phase updates land
    on the right bank entry; target is YES exactly when symbol_class is the
    sample's true class.
    """

    features: np.ndarray
    symbol: np.ndarray
    target: int
    symbol_class: int


def make_batch(dataset: FeatureDataset, bank: dict[int, np.ndarray],
               policy: NegativeSamplingPolicy, rng: np.random.Generator,
               batch_size: int = 64, indices: np.ndarray | None = None,
               ) -> list[LabeledPair]:
    """Assemble labeled pairs from train-partition rows.

    Rows come from ``indices`` (positions within the train partition) or are
    drawn uniformly with replacement. Each sample is independently flipped to
    a uniformly chosen other class's symbol with the batch's probability p.
    """
    feats, labels = dataset.partition(test=False)
    if indices is None:
        indices = rng.integers(0, feats.shape[0], size=batch_size)
    rows = feats[indices]
    true = labels[indices]
    classes = np.array(sorted(bank), dtype=np.intp)
    missing = set(int(c) for c in np.unique(true)) - set(int(c) for c in classes)
    if missing:
        raise ValueError(f"bank missing classes: {sorted(missing)}")
    if classes.size < 2:
        raise ValueError("negative sampling needs at least 2 classes in the bank")

    rank = {int(c): i for i, c in enumerate(classes)}
    true_rank = np.array([rank[int(c)] for c in true])
    p = policy.draw(rng)
    flip = rng.random(true.size) < p
    # Uniform draw over the other classes: index the sorted class list with
    # the true class's slot skipped.
    other = rng.integers(0, classes.size - 1, size=true.size)
    other = other + (other >= true_rank)
    fed_rank = np.where(flip, other, true_rank)

    pairs = []
    for i in range(true.size):
        cid = int(classes[fed_rank[i]])
        pairs.append(LabeledPair(features=rows[i], symbol=bank[cid],
                                 target=YES if not flip[i] else NO,
                                 symbol_class=cid))
    return pairs


def inject_noise(symbol: np.ndarray, noise_amp: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Independent uniform(-noise_amp, noise_amp) perturbation per element;
    the input symbol is left untouched."""
    if noise_amp < 0:
        raise ValueError("noise_amp must be nonnegative")
    symbol = np.asarray(symbol, dtype=np.float64)
    if noise_amp == 0:
        return symbol.copy()
    return symbol + rng.uniform(-noise_amp, noise_amp, size=symbol.shape)


def _stack_batch(pairs: list[LabeledPair]):
    x = np.stack([p.features for p in pairs])
    s = np.stack([p.symbol for p in pairs])
    targets = np.array([p.target for p in pairs], dtype=np.intp)
    sym_cls = np.array([p.symbol_class for p in pairs], dtype=np.intp)
    return x, s, targets, sym_cls


def _epoch_batches(dataset: FeatureDataset, config: TrainConfig,
                   rng: np.random.Generator):
    n = (~dataset.test_mask).sum()
    perm = rng.permutation(n)
    for start in range(0, n, config.batch_size):
        yield perm[start:start + config.batch_size]


def _param_grads(cdp_g: grad.Gradients, ts_g: grad.Gradients) -> list[np.ndarray]:
    arrays = []
    for g in (cdp_g, ts_g):
        for w, b in zip(g.weights, g.biases):
            arrays.append(w)
            arrays.append(b)
    return arrays


def _bank_matrix(bank: dict[int, np.ndarray]) -> np.ndarray:
    return np.stack([bank[c] for c in sorted(bank)])


def network_phase_epoch(agent: Agent, dataset: FeatureDataset,
                        config: TrainConfig, rng: np.random.Generator,
                        opt_state: grad.AdamState | None = None):
    """One parameter-update epoch; the symbol bank must come out bit-equal.

    Returns (stats, opt_state). ``opt_state`` threads Adam moments between
    epochs and is ignored for plain SGD.
    """
    bank_before = _bank_matrix(agent.bank)
    policy = NegativeSamplingPolicy(config.negative_p)
    losses, hits, total = [], 0, 0
    for idx in _epoch_batches(dataset, config, rng):
        pairs = make_batch(dataset, agent.bank, policy, rng, indices=idx)
        x, s, targets, _ = _stack_batch(pairs)
        s = s + rng.uniform(-config.noise_amp, config.noise_amp, size=s.shape) \
            if config.noise_amp > 0 else s
        logits, tape = network.sea_forward(agent, s, x)
        loss, dlogits = grad.softmax_cross_entropy(logits, targets)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite loss in network phase (batch of {len(pairs)})")
        cdp_g, ts_g, _ = network.sea_backward(agent, tape, dlogits)
        params = agent.parameters()
        grads = _param_grads(cdp_g, ts_g)
        if config.optimizer == "adam":
            if opt_state is None:
                opt_state = grad.adam_init(params)
            params, opt_state = grad.adam_step(opt_state, params, grads, config.lr_net)
        else:
            params = grad.sgd_step(params, grads, config.lr_net)
        agent.set_parameters(params)
        losses.append(loss)
        hits += int((network.decide_batch(logits) == targets).sum())
        total += len(pairs)
    if not np.array_equal(bank_before, _bank_matrix(agent.bank)):
        raise AssertionError("network phase modified the symbol bank")
    return {"loss": float(np.mean(losses)), "accuracy": hits / total}, opt_state


def symbol_phase_epoch(agent: Agent, dataset: FeatureDataset,
                       config: TrainConfig, rng: np.random.Generator,
                       opt_state: grad.AdamState | None = None):
    """One symbol-update epoch; network parameters must come out bit-equal.

    Each batch's symbol gradient is accumulated onto the bank entry whose
    symbol was actually fed (true or false alike).
    """
    params_before = [a.copy() for a in agent.parameters()]
    classes = sorted(agent.bank)
    rank = {c: i for i, c in enumerate(classes)}
    policy = NegativeSamplingPolicy(config.negative_p)
    losses, hits, total = [], 0, 0
    for idx in _epoch_batches(dataset, config, rng):
        pairs = make_batch(dataset, agent.bank, policy, rng, indices=idx)
        x, s, targets, sym_cls = _stack_batch(pairs)
        s = s + rng.uniform(-config.noise_amp, config.noise_amp, size=s.shape) \
            if config.noise_amp > 0 else s
        logits, tape = network.sea_forward(agent, s, x)
        loss, dlogits = grad.softmax_cross_entropy(logits, targets)
        if not np.isfinite(loss):
            raise RuntimeError(f"non-finite loss in symbol phase (batch of {len(pairs)})")
        _, _, sym_grad = network.sea_backward(agent, tape, dlogits)
        bank_grad = np.zeros((len(classes), agent.symbol_len))
        np.add.at(bank_grad, [rank[int(c)] for c in sym_cls], sym_grad)
        bank_mat = _bank_matrix(agent.bank)
        if config.optimizer == "adam":
            if opt_state is None:
                opt_state = grad.adam_init(bank_mat)
            bank_mat, opt_state = grad.adam_step(opt_state, bank_mat, bank_grad,
                                                 config.lr_symbol)
        else:
            bank_mat = grad.sgd_step(bank_mat, bank_grad, config.lr_symbol)
        for c in classes:
            agent.bank[c] = bank_mat[rank[c]]
        losses.append(loss)
        hits += int((network.decide_batch(logits) == targets).sum())
        total += len(pairs)
    for before, after in zip(params_before, agent.parameters()):
        if not np.array_equal(before, after):
            raise AssertionError("symbol phase modified network parameters")
    return {"loss": float(np.mean(losses)), "accuracy": hits / total}, opt_state


def train(agent: Agent, dataset: FeatureDataset, config: TrainConfig,
          ) -> tuple[Agent, list[dict]]:
    """Alternate network/symbol phases epoch-by-epoch (network first).

    Returns the trained agent (mutated in place) and a per-epoch history of
    phase, loss, and batch accuracy; mean balanced accuracies over the train
    and test partitions are recorded every ``eval_every`` epochs and on the
    final epoch.
    """
    rng = np.random.default_rng(config.seed)
    history = []
    net_state = sym_state = None
    for epoch in range(config.epochs):
        if epoch % 2 == 0:
            stats, net_state = network_phase_epoch(agent, dataset, config, rng,
                                                   net_state)
            phase = "network"
        else:
            stats, sym_state = symbol_phase_epoch(agent, dataset, config, rng,
                                                  sym_state)
            phase = "symbol"
        row = {"epoch": epoch, "phase": phase, "loss": stats["loss"],
               "train_acc": None, "test_acc": None}
        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            row["train_acc"] = mean_balanced_accuracy(agent, dataset, test=False)
            row["test_acc"] = mean_balanced_accuracy(agent, dataset, test=True)
        history.append(row)
    return agent, history


def evaluate(agent: Agent, dataset: FeatureDataset, class_id: int,
             noise_off: bool = True, symbol: np.ndarray | None = None,
             test: bool = True, rng: np.random.Generator | None = None) -> float:
    """Balanced accuracy of Yes/No decisions for one class's symbol.

    Every row of the chosen partition is fed with the class symbol (or the
    explicit ``symbol`` override, e.g. a translated one); positives are the
    class's rows, negatives everyone else's. ``noise_off=False`` perturbs the
    symbol once per call (diagnostic only) and needs an rng.
    """
    if symbol is None:
        if class_id not in agent.bank:
            raise ValueError(f"class {class_id} not in bank and no symbol given")
        symbol = agent.bank[class_id]
    symbol = np.asarray(symbol, dtype=np.float64)
    if not noise_off:
        if rng is None:
            raise ValueError("noisy evaluation needs an rng")
        symbol = inject_noise(symbol, 0.1, rng)
    feats, labels = dataset.partition(test=test)
    if feats.shape[0] == 0:
        raise ValueError("empty evaluation partition")
    pos = labels == class_id
    if not pos.any():
        raise ValueError(f"no rows of class {class_id} in the partition")

    gains, _ = network.cdp_forward(agent.cdp, symbol)
    ts_gains = list(gains[1:]) + [None]
    logits, _ = grad.forward(agent.ts.layers, gains[0] * feats, ts_gains)
    said_yes = network.decide_batch(logits) == YES
    tpr = float(said_yes[pos].mean())
    if (~pos).any():
        tnr = float((~said_yes[~pos]).mean())
        return 0.5 * (tpr + tnr)
    return tpr


def mean_balanced_accuracy(agent: Agent, dataset: FeatureDataset,
                           test: bool = True) -> float:
    """Mean of per-class balanced accuracies over the classes in the bank
    that appear in the dataset."""
    accs = [evaluate(agent, dataset, c, test=test)
            for c in dataset.present_classes if c in agent.bank]
    if not accs:
        raise ValueError("no evaluable classes")
    return float(np.mean(accs))


def write_history_csv(history: list[dict], path) -> None:
    """epoch, phase, loss, train_acc, test_acc (blank where not evaluated)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "phase", "loss", "train_acc", "test_acc"])
        for row in history:
            writer.writerow([row["epoch"], row["phase"], repr(row["loss"]),
                             "" if row["train_acc"] is None else repr(row["train_acc"]),
                             "" if row["test_acc"] is None else repr(row["test_acc"])])
