"""Layer-wise relevance propagation with the epsilon rule.

Relevance starts at one output unit and is pushed back layer by layer.
Dense and convolution layers share it out in proportion to each input's
contribution ``a_j * w_jk``; biases take no share. ReLU layers pass relevance
through untouched and max pooling hands everything to the window winner.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import (
    Conv2D,
    Dense,
    ForwardTrace,
    MaxPool2x2,
    Network,
    NetworkError,
    ReLU,
    conv2d,
    conv2d_input_grad,
    maxpool_route,
    softmax,
)


@dataclass(frozen=True)
class EpsilonRuleConfig:
    """``sign_stabilization`` adds ``epsilon * sign(z)`` (sign(0) = +1) to each
    denominator; turned off, ``epsilon`` is added as-is. ``start`` picks the
    quantity decomposed at the output: the raw ``"logit"`` or the ``"softmax"``
    probability.
    """

    epsilon: float = 1e-2
    sign_stabilization: bool = True
    start: str = "logit"

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.start not in ("logit", "softmax"):
            raise ValueError(f"start must be 'logit' or 'softmax', got {self.start!r}")


@dataclass
class RelevanceMap:
    relevance: np.ndarray  # same shape as one input sample
    class_index: int
    epsilon: float


def _stabilize(z, cfg: EpsilonRuleConfig):
    if cfg.sign_stabilization:
        denom = z + cfg.epsilon * np.where(z >= 0, 1.0, -1.0)
    else:
        denom = z + cfg.epsilon
    # Exactly-zero denominators (only reachable with epsilon = 0) pass no relevance.
    safe = np.where(denom == 0, 1.0, denom)
    return np.where(denom == 0, 0.0, 1.0 / safe)


def propagate_relevance(net: Network, trace: ForwardTrace, output_relevance, cfg: EpsilonRuleConfig) -> np.ndarray:
    """Push a ``(batch, C)`` output relevance back to a ``(batch, *input_shape)`` map."""
    if len(trace) != len(net.layers):
        raise NetworkError("trace does not belong to this network")
    r = np.asarray(output_relevance, dtype=np.float64)
    for i in range(len(net.layers) - 1, -1, -1):
        spec, p, a = net.layers[i], net.params[i], trace.inputs[i]
        if isinstance(spec, Dense):
            r = a * ((r * _stabilize(a @ p["W"], cfg)) @ p["W"].T)
        elif isinstance(spec, Conv2D):
            r = a * conv2d_input_grad(r * _stabilize(conv2d(a, p["W"]), cfg), p["W"])
        elif isinstance(spec, MaxPool2x2):
            r = maxpool_route(a, r)
        elif isinstance(spec, ReLU):
            pass
        else:
            r = r.reshape(a.shape)
    return r


def batch_lrp(net: Network, trace: ForwardTrace, class_indices, cfg: EpsilonRuleConfig = EpsilonRuleConfig()) -> list:
    """One relevance map per sample of a traced batch, each for its own class."""
    logits = trace.logits
    class_indices = np.asarray(class_indices, dtype=np.int64).ravel()
    if class_indices.size != logits.shape[0]:
        raise ValueError(f"{class_indices.size} class indices for a batch of {logits.shape[0]}")
    if class_indices.size and (class_indices.min() < 0 or class_indices.max() >= net.class_count):
        raise ValueError(f"class index outside [0, {net.class_count})")
    rows = np.arange(logits.shape[0])
    start = logits if cfg.start == "logit" else softmax(logits)
    seed = np.zeros_like(logits)
    seed[rows, class_indices] = start[rows, class_indices]
    rel = propagate_relevance(net, trace, seed, cfg)
    return [RelevanceMap(rel[b], int(class_indices[b]), cfg.epsilon) for b in rows]


def lrp_epsilon(net: Network, trace: ForwardTrace, class_index: int, cfg: EpsilonRuleConfig = EpsilonRuleConfig()) -> RelevanceMap:
    """Relevance map of a single-sample trace for class ``class_index``."""
    if trace.logits.shape[0] != 1:
        raise ValueError("lrp_epsilon expects a single-sample trace; use batch_lrp for batches")
    return batch_lrp(net, trace, [class_index], cfg)[0]


def heatmap_grid(relevance) -> np.ndarray:
    """2-D view of a relevance map: vectors become one row, channels stack vertically."""
    r = np.asarray(relevance, dtype=np.float64)
    if r.ndim == 1:
        return r[None, :]
    if r.ndim == 2:
        return r
    if r.ndim == 3:
        return r.reshape(r.shape[0] * r.shape[1], r.shape[2])
    raise ValueError(f"cannot lay out relevance of shape {r.shape} as a 2-D grid")


def heatmap_pixels(grid) -> np.ndarray:
    """8-bit grey levels: 128 is zero relevance, +max|R| maps to 255 and -max|R| to 1."""
    peak = np.abs(grid).max() if grid.size else 0.0
    if peak == 0:
        return np.full(grid.shape, 128, dtype=np.int64)
    return np.clip(np.rint(128 + 127 * grid / peak), 0, 255).astype(np.int64)


def export_heatmap(rmap: RelevanceMap, path) -> tuple:
    """Write ``<path>.csv`` (signed values) and ``<path>.pgm`` (plain P2). Returns both paths."""
    base = Path(path)
    grid = heatmap_grid(rmap.relevance)
    csv_path = base.with_name(base.name + ".csv")
    pgm_path = base.with_name(base.name + ".pgm")
    with open(csv_path, "w", newline="") as f:
        for row in grid:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    pixels = heatmap_pixels(grid)
    with open(pgm_path, "w", newline="") as f:
        f.write(f"P2\n{grid.shape[1]} {grid.shape[0]}\n255\n")
        for row in pixels:
            f.write(" ".join(str(v) for v in row) + "\n")
    return csv_path, pgm_path


def read_heatmap_csv(path) -> np.ndarray:
    with open(path) as f:
        return np.array([[float(v) for v in line.split(",")] for line in f if line.strip()])


def read_pgm(path) -> np.ndarray:
    with open(path) as f:
        tokens = [t for line in f if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError(f"{os.fspath(path)} is not a plain PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.array([int(t) for t in tokens[4:4 + w * h]]).reshape(h, w)
