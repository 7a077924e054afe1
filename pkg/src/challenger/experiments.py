"""Run one (method, seed) experiment from an ``ExperimentConfig``.

Every method trained with the same seed starts from the same weights, sees
the same training subset and the same batch order, so method comparisons are
paired by seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .baselines import train_baseline
from .challenger import StepLog, train_with_challenger
from .config import ConfigError, ExperimentConfig
from .data import Dataset, load_idx, synth_blobs, tiny_subset
from .metrics import MetricsReport, evaluate
from .network import Network, build_network, forward
from .tensor import make_rng

METHODS = ("base", "challenger", "random", "fgsm", "pgd")
_VARIANT = {"base": "plain", "random": "random_challenge", "fgsm": "fgsm", "pgd": "pgd"}


@lru_cache(maxsize=8)
def _idx(images, labels, split, n_classes):
    return load_idx(images, labels, split, n_classes)


def load_datasets(cfg: ExperimentConfig, seed: int) -> tuple:
    """``(train, test)`` for one run seed, shaped to ``model.input_shape``."""
    kind = cfg["dataset.kind"]
    if kind == "synth":
        # one draw shares the class centres; the first per_class samples of each class train
        n_train = cfg["synth.per_class"]
        both = synth_blobs(cfg["synth.classes"], n_train + cfg["synth.test_per_class"], cfg["synth.dim"],
                           cfg["synth.separation"], seed=0, sigma=cfg["synth.sigma"])
        rank = _rank_within_class(both.labels)
        train = both.subset(np.flatnonzero(rank < n_train))
        test = both.subset(np.flatnonzero(rank >= n_train))
        test.split = "test"
    elif kind == "idx":
        n_classes = cfg["dataset.classes"]
        train = _idx(cfg["dataset.train_images"], cfg["dataset.train_labels"], "train", n_classes)
        test = _idx(cfg["dataset.test_images"], cfg["dataset.test_labels"], "test", n_classes)
    else:
        raise ConfigError(f"dataset.kind must be 'synth' or 'idx', got {kind!r}")

    if cfg["dataset.per_class"] > 0:
        subset_seed = cfg["dataset.subset_seed"]
        train = tiny_subset(train, cfg["dataset.per_class"], seed if subset_seed == "run" else int(subset_seed))
    limit = cfg["dataset.test_limit"]
    if 0 < limit < len(test):
        test = test.subset(np.sort(make_rng(0).permutation(len(test))[:limit]))
    shape = cfg.input_shape
    return train.reshaped(shape), test.reshaped(shape)


def _rank_within_class(labels) -> np.ndarray:
    rank = np.zeros(labels.size, dtype=np.int64)
    for c in np.unique(labels):
        where = np.flatnonzero(labels == c)
        rank[where] = np.arange(where.size)
    return rank


@dataclass
class RunResult:
    method: str
    seed: int
    net: Network
    log: StepLog
    report: MetricsReport
    test_logits: np.ndarray
    curve: list = field(default_factory=list)  # (step, test accuracy) pairs


def run_method(cfg: ExperimentConfig, method: str, seed: int, top_k: int = None) -> RunResult:
    """Train ``method`` with ``seed`` and evaluate it on the test split.

    ``top_k`` overrides ``challenger.top_k``. With ``train.eval_every > 0`` the
    test accuracy is also recorded every that many steps and after the last one.
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    train, test = load_datasets(cfg, seed)
    net = build_network(cfg.layers, seed, cfg.input_shape)
    ccfg = cfg.challenger_config()
    if top_k is not None:
        ccfg.top_k = top_k

    curve = []
    every = cfg["train.eval_every"]
    steps = cfg["train.steps"]

    def record(step, current):
        if every > 0 and ((step + 1) % every == 0 or step + 1 == steps):
            curve.append((step + 1, _accuracy(current, test)))

    kwargs = dict(batch_size=cfg["train.batch_size"], lr=cfg["optim.lr"], seed=seed, callback=record)
    if method == "challenger":
        trained, log = train_with_challenger(net, train, ccfg, steps, **kwargs)
    else:
        trained, log = train_baseline(net, train, _VARIANT[method], steps, ccfg, cfg.adversarial_config(), **kwargs)
    logits = _logits(trained, test)
    return RunResult(method, seed, trained, log, evaluate(trained, test.inputs, test.labels), logits, curve)


def _logits(net: Network, ds: Dataset, batch_size: int = 500) -> np.ndarray:
    return np.concatenate([forward(net, ds.inputs[i:i + batch_size]) for i in range(0, len(ds), batch_size)])


def _accuracy(net: Network, ds: Dataset) -> float:
    return float(np.mean(np.argmax(_logits(net, ds), axis=1) == ds.labels))
