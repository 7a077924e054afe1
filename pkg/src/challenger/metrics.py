"""Prediction quality, calibration and filter-diversity metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .network import Conv2D, Dense, Network, check_labels, forward, log_softmax, softmax


def _check(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("metrics need a non-empty (batch, classes) logit array")
    return logits, check_labels(labels, logits.shape[1], logits.shape[0])


def accuracy(logits, labels) -> float:
    logits, labels = _check(logits, labels)
    return float(np.mean(logits.argmax(axis=1) == labels))


def nll(logits, labels) -> float:
    """Mean negative log-likelihood of the true class, in nats."""
    logits, labels = _check(logits, labels)
    return float(-log_softmax(logits)[np.arange(labels.size), labels].mean())


def brier(logits, labels) -> float:
    """Squared error between probabilities and one-hot targets, averaged over classes and samples."""
    logits, labels = _check(logits, labels)
    target = np.eye(logits.shape[1])[labels]
    return float(np.mean((softmax(logits) - target) ** 2))


def reliability_bins(logits, labels, bins: int = 15) -> list:
    """Per-bin ``(lower, upper, count, mean_confidence, accuracy)`` over equal-width bins on (0, 1]."""
    logits, labels = _check(logits, labels)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    probs = softmax(logits)
    conf = probs.max(axis=1)
    correct = probs.argmax(axis=1) == labels
    which = np.clip(np.ceil(conf * bins).astype(np.int64) - 1, 0, bins - 1)
    rows = []
    for b in range(bins):
        mask = which == b
        n = int(mask.sum())
        rows.append((b / bins, (b + 1) / bins, n,
                     float(conf[mask].mean()) if n else 0.0,
                     float(correct[mask].mean()) if n else 0.0))
    return rows


def ece(logits, labels, bins: int = 15) -> float:
    """Expected calibration error of the max-probability confidence."""
    rows = reliability_bins(logits, labels, bins)
    total = sum(r[2] for r in rows)
    return float(sum(n / total * abs(acc - conf) for _, _, n, conf, acc in rows if n))


def layer_filters(spec, params) -> np.ndarray:
    """One row per filter: conv output channel, or dense output unit."""
    if isinstance(spec, Conv2D):
        return params["W"].reshape(spec.out_channels, -1)
    return params["W"].T


def pairwise_cosines(filters) -> np.ndarray:
    """Signed cosine for every unordered pair of rows."""
    f = np.asarray(filters, dtype=np.float64)
    norms = np.linalg.norm(f, axis=1)
    unit = f / np.where(norms == 0, 1.0, norms)[:, None]
    i, j = np.triu_indices(f.shape[0], k=1)
    return np.einsum("ij,ij->i", unit[i], unit[j])


@dataclass
class CosineStats:
    layer_means: list = field(default_factory=list)
    layer_stds: list = field(default_factory=list)
    layer_indices: list = field(default_factory=list)

    @property
    def overall(self) -> float:
        return float(np.mean(self.layer_means))


def filter_cosine_similarity(net: Network) -> CosineStats:
    """Mean and population std of pairwise filter cosines per parameterized layer."""
    stats = CosineStats()
    for i, (spec, p) in enumerate(zip(net.layers, net.params)):
        if not isinstance(spec, (Dense, Conv2D)):
            continue
        filters = layer_filters(spec, p)
        if filters.shape[0] < 2:
            warnings.warn(f"layer {i} ({spec}) has fewer than 2 filters; skipped")
            continue
        cos = pairwise_cosines(filters)
        stats.layer_means.append(float(cos.mean()))
        stats.layer_stds.append(float(cos.std()))
        stats.layer_indices.append(i)
    if not stats.layer_means:
        raise ValueError("network has no parameterized layer with at least 2 filters")
    return stats


@dataclass
class MetricsReport:
    accuracy: float
    nll: float
    brier: float
    ece: float
    cosine: CosineStats

    # CSV column order; per-layer cosine columns follow in layer order.
    BASE_COLUMNS = ("accuracy", "nll", "brier", "ece", "cos_mean")

    def columns(self) -> list:
        cols = list(self.BASE_COLUMNS)
        for i in self.cosine.layer_indices:
            cols += [f"cos_layer{i}_mean", f"cos_layer{i}_std"]
        return cols

    def values(self) -> list:
        vals = [self.accuracy, self.nll, self.brier, self.ece, self.cosine.overall]
        for m, s in zip(self.cosine.layer_means, self.cosine.layer_stds):
            vals += [m, s]
        return vals

    def as_dict(self) -> dict:
        return dict(zip(self.columns(), self.values()))


def evaluate(net: Network, inputs, labels, bins: int = 15, batch_size: int = 500) -> MetricsReport:
    logits = np.concatenate([forward(net, inputs[i:i + batch_size]) for i in range(0, len(inputs), batch_size)])
    return MetricsReport(
        accuracy=accuracy(logits, labels),
        nll=nll(logits, labels),
        brier=brier(logits, labels),
        ece=ece(logits, labels, bins),
        cosine=filter_cosine_similarity(net),
    )
