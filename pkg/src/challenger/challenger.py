"""Relevance-guided input challenges and the training loop that uses them.

Each step reads a batch, explains every sample's prediction for a shared
randomly drawn rank ``k`` (the sample's k-th most likely class), picks the
``N`` most positive or most negative relevance features per sample, lowers
them by ``alpha`` in the first quarter of the batch, raises them by ``beta``
in the second quarter, leaves the rest untouched, and takes one Adam step on
the challenged batch with the original labels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .attribution import EpsilonRuleConfig, batch_lrp
from .data import Dataset, batch_stream
from .network import AdamState, Network, adam_step, backward, cross_entropy, forward_traced
from .tensor import make_rng, topn_indices


@dataclass
class ChallengerConfig:
    alpha: float = 0.5
    beta: float = 0.5
    n_features: Optional[int] = None  # None: ceil(5% of the input features)
    top_k: int = 5
    split: tuple = (0.25, 0.25, 0.5)  # challenge A, challenge B, unmodified
    epsilon_rule: EpsilonRuleConfig = field(default_factory=EpsilonRuleConfig)
    clip_to_input_range: bool = False

    def features_for(self, n_inputs: int) -> int:
        return math.ceil(0.05 * n_inputs) if self.n_features is None else self.n_features

    def validate(self, n_classes: int, n_inputs: int) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 1 <= self.top_k <= n_classes:
            raise ValueError(f"top_k={self.top_k} outside [1, {n_classes}]")
        if not 0 <= self.features_for(n_inputs) <= n_inputs:
            raise ValueError(f"n_features={self.n_features} outside [0, {n_inputs}]")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0):
            raise ValueError(f"split fractions {self.split} must be three non-negative values summing to 1")

    def split_counts(self, batch_size: int) -> tuple:
        """Number of samples that get challenge A and challenge B."""
        return math.floor(self.split[0] * batch_size), math.floor(self.split[1] * batch_size)


@dataclass
class ModificationSet:
    indices: list  # per sample: flat feature indices to modify
    modes: list  # per sample: "highest" or "lowest"


# -- selection ----------------------------------------------------------------

def choose_rank(logits, top_k: int, rng: np.random.Generator) -> int:
    """Uniform draw of a rank in 1..top_k, shared by the whole batch."""
    n_classes = np.shape(logits)[1]
    if not 1 <= top_k <= n_classes:
        raise ValueError(f"top_k={top_k} outside [1, {n_classes}]")
    return int(rng.integers(1, top_k + 1))


def ranked_classes(logits, rank: int) -> np.ndarray:
    """Each sample's ``rank``-th most likely class (1 = top prediction, ties to the lower index)."""
    order = np.argsort(-np.asarray(logits), axis=1, kind="stable")
    return order[:, rank - 1]


def select_features(relevance, n: int, mode: str) -> np.ndarray:
    """Flat indices of the ``n`` highest or lowest relevance scores of one sample."""
    return topn_indices(np.ravel(relevance), n, mode)


def draw_modes(batch_size: int, rng: np.random.Generator) -> list:
    return ["highest" if bit else "lowest" for bit in rng.integers(0, 2, size=batch_size)]


# -- challenges ---------------------------------------------------------------

def _shift(x, indices, amount, clip):
    out = np.array(x, dtype=np.float64)
    flat = out.reshape(-1)
    flat[np.asarray(indices, dtype=np.int64)] += amount
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def challenge_a(x, indices, alpha: float, clip: bool = False) -> np.ndarray:
    """Lower the selected features by ``alpha``."""
    return _shift(x, indices, -alpha, clip)


def challenge_b(x, indices, beta: float, clip: bool = False) -> np.ndarray:
    """Raise the selected features by ``beta``."""
    return _shift(x, indices, beta, clip)


def apply_challenges(batch, mods: ModificationSet, cfg: ChallengerConfig) -> tuple:
    """Challenge A on the leading samples, challenge B on the next ones, the rest untouched.

    Returns the new batch and the batch positions that were challenged.
    """
    batch = np.asarray(batch, dtype=np.float64)
    n_a, n_b = cfg.split_counts(batch.shape[0])
    out = batch.copy()
    for s in range(n_a):
        out[s] = challenge_a(batch[s], mods.indices[s], cfg.alpha, cfg.clip_to_input_range)
    for s in range(n_a, n_a + n_b):
        out[s] = challenge_b(batch[s], mods.indices[s], cfg.beta, cfg.clip_to_input_range)
    return out, np.arange(n_a + n_b)


# -- training -----------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    loss: float
    rank_k: Optional[int]
    modified: tuple  # dataset indices of the challenged samples
    batch: tuple = ()  # dataset indices of the whole batch, in order


class StepLog(list):
    COLUMNS = ("step", "loss", "rank_k", "modified_sample_indices")

    def write_csv(self, path, provenance: str = "") -> None:
        with open(path, "w", newline="") as f:
            if provenance:
                f.write(f"# {provenance}\n")
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for r in self:
                w.writerow([r.step, repr(r.loss), "" if r.rank_k is None else r.rank_k,
                            " ".join(str(i) for i in r.modified)])


# A perturbation takes (net, x, y, rng) and returns (x_tilde, rank or None, challenged positions).
Perturbation = Callable[[Network, np.ndarray, np.ndarray, np.random.Generator], tuple]


def run_training(
    net: Network,
    data: Dataset,
    steps: int,
    perturb: Optional[Perturbation] = None,
    *,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    adam: Optional[AdamState] = None,
    callback: Optional[Callable[[int, Network], None]] = None,
) -> tuple:
    """Shared loop for every training variant.

    Batch order depends only on ``seed``, so all variants run with the same
    seed see identical batches. Perturbations draw from a separate stream.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    net = net.copy()
    adam = adam if adam is not None else AdamState.for_network(net, lr)
    rng = make_rng((seed, 1))
    stream = batch_stream(len(data), batch_size, seed)
    log = StepLog()
    for step in range(steps):
        idx = next(stream)
        x, y = data.inputs[idx], data.labels[idx]
        if perturb is None:
            x_tilde, rank, positions = x, None, np.arange(0)
        else:
            x_tilde, rank, positions = perturb(net, x, y, rng)
        logits, trace = forward_traced(net, x_tilde)
        grads, _ = backward(net, trace, y)
        adam_step(net, grads, adam)
        log.append(StepRecord(step, cross_entropy(logits, y), rank, tuple(int(i) for i in idx[positions]), tuple(int(i) for i in idx)))
        if callback is not None:
            callback(step, net)
    return net, log


def challenger_perturbation(cfg: ChallengerConfig) -> Perturbation:
    def perturb(net, x, y, rng):
        logits, trace = forward_traced(net, x)
        rank = choose_rank(logits, cfg.top_k, rng)
        maps = batch_lrp(net, trace, ranked_classes(logits, rank), cfg.epsilon_rule)
        modes = draw_modes(x.shape[0], rng)
        n = cfg.features_for(int(np.prod(x.shape[1:])))
        mods = ModificationSet([select_features(m.relevance, n, mode) for m, mode in zip(maps, modes)], modes)
        x_tilde, positions = apply_challenges(x, mods, cfg)
        return x_tilde, rank, positions

    return perturb


def train_with_challenger(net: Network, data: Dataset, cfg: ChallengerConfig, steps: int, **kwargs) -> tuple:
    """Train with relevance-guided challenges. Returns ``(trained network, StepLog)``."""
    cfg.validate(net.class_count, int(np.prod(net.input_shape)))
    return run_training(net, data, steps, challenger_perturbation(cfg), **kwargs)
