"""Comparison training variants: random feature selection, FGSM and PGD.

All variants share the challenger training loop, so under one seed they see
the same batches in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .challenger import ChallengerConfig, ModificationSet, apply_challenges, run_training
from .data import Dataset
from .network import Network, loss_and_input_grad

VARIANTS = ("plain", "random_challenge", "fgsm", "pgd")


@dataclass
class AdversarialConfig:
    eps: float = 0.1
    pgd_step: float = 0.025
    pgd_iters: int = 7

    def validate(self) -> None:
        if self.eps < 0 or self.pgd_step <= 0 or self.pgd_iters < 1:
            raise ValueError(f"invalid adversarial config {self}")


def random_select_features(n_inputs: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform ``n``-subset of ``range(n_inputs)`` without replacement, sorted."""
    if not 0 <= n <= n_inputs:
        raise ValueError(f"n={n} outside [0, {n_inputs}]")
    return np.sort(rng.choice(n_inputs, size=n, replace=False))


def fgsm_perturb(x, input_grad, eps: float) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) + eps * np.sign(input_grad)


def pgd_perturb(net: Network, x, labels, cfg: AdversarialConfig) -> np.ndarray:
    """Iterated sign-gradient ascent on the loss, projected back into the L-inf ball around ``x``."""
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x - cfg.eps, x + cfg.eps
    adv = x.copy()
    for _ in range(cfg.pgd_iters):
        _, grad = loss_and_input_grad(net, adv, labels)
        adv = np.clip(adv + cfg.pgd_step * np.sign(grad), lo, hi)
    return adv


def _random_perturbation(cfg: ChallengerConfig):
    def perturb(net, x, y, rng):
        d = int(np.prod(x.shape[1:]))
        n = cfg.features_for(d)
        mods = ModificationSet([random_select_features(d, n, rng) for _ in range(x.shape[0])], ["random"] * x.shape[0])
        x_tilde, positions = apply_challenges(x, mods, cfg)
        return x_tilde, None, positions

    return perturb


def _adversarial_perturbation(variant: str, fraction_cfg: ChallengerConfig, adv: AdversarialConfig):
    def perturb(net, x, y, rng):
        n_a, n_b = fraction_cfg.split_counts(x.shape[0])
        m = n_a + n_b
        x_tilde = x.copy()
        if m:
            if variant == "fgsm":
                _, grad = loss_and_input_grad(net, x[:m], y[:m])
                x_tilde[:m] = fgsm_perturb(x[:m], grad, adv.eps)
            else:
                x_tilde[:m] = pgd_perturb(net, x[:m], y[:m], adv)
        return x_tilde, None, np.arange(m)

    return perturb


def train_baseline(
    net: Network,
    data: Dataset,
    variant: str,
    steps: int,
    challenger_cfg: ChallengerConfig = None,
    adversarial_cfg: AdversarialConfig = None,
    **kwargs,
) -> tuple:
    """Train a comparison variant; returns ``(trained network, StepLog)``.

    ``plain`` skips perturbation entirely. ``random_challenge`` replaces the
    relevance-based feature choice with a random one. ``fgsm`` and ``pgd``
    perturb the same share of each batch that the challenges would modify.
    """
    challenger_cfg = challenger_cfg or ChallengerConfig()
    adversarial_cfg = adversarial_cfg or AdversarialConfig()
    if variant == "plain":
        perturb = None
    elif variant == "random_challenge":
        challenger_cfg.validate(net.class_count, int(np.prod(net.input_shape)))
        perturb = _random_perturbation(challenger_cfg)
    elif variant in ("fgsm", "pgd"):
        adversarial_cfg.validate()
        perturb = _adversarial_perturbation(variant, challenger_cfg, adversarial_cfg)
    else:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return run_training(net, data, steps, perturb, **kwargs)
