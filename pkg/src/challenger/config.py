"""Experiment configuration as flat ``key = value`` text.

Lines are ``dotted.key = value``; ``#`` starts a comment. Every key has a
default, so a config file only lists what it changes. ``to_text`` writes
every key in a fixed order, which makes the text form canonical: parsing it
back gives an equal config, and its SHA-256 identifies the experiment.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from .attribution import EpsilonRuleConfig
from .baselines import AdversarialConfig
from .challenger import ChallengerConfig
from .network import Conv2D, Dense, Flatten, MaxPool2x2, ReLU


class ConfigError(ValueError):
    pass


# -- value codecs ---------------------------------------------------------------

def _bool(text):
    if text.lower() in ("true", "yes", "1", "on"):
        return True
    if text.lower() in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _float_list(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _auto_int(text):
    return None if text == "auto" else int(text)


_LAYER_RE = re.compile(r"(\w+)(?:\(([\d,\s]*)\))?")
_LAYER_NAMES = {"dense": Dense, "conv": Conv2D, "relu": ReLU, "maxpool": MaxPool2x2, "flatten": Flatten}


def parse_layers(text) -> tuple:
    """``conv(1,8,5,5) relu maxpool flatten dense(256,10)`` -> layer specs."""
    layers = []
    for name, args in _LAYER_RE.findall(text.replace(", ", ",")):
        cls = _LAYER_NAMES.get(name.lower())
        if cls is None:
            raise ValueError(f"unknown layer {name!r}")
        values = [int(a) for a in args.split(",") if a.strip()] if args else []
        layers.append(cls(*values))
    if not layers:
        raise ValueError("no layers given")
    return tuple(layers)


def format_layers(layers) -> str:
    names = {cls: name for name, cls in _LAYER_NAMES.items()}
    out = []
    for spec in layers:
        values = [str(getattr(spec, f)) for f in spec.__dataclass_fields__]
        out.append(names[type(spec)] + (f"({','.join(values)})" if values else ""))
    return " ".join(out)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if value is None:
        return "auto"
    return str(value)


# key -> (default, parser); the order here is the canonical text order
SCHEMA = {
    "dataset.kind": ("synth", str),
    "dataset.train_images": ("", str),
    "dataset.train_labels": ("", str),
    "dataset.test_images": ("", str),
    "dataset.test_labels": ("", str),
    "dataset.classes": (10, int),
    "dataset.per_class": (0, int),
    "dataset.subset_seed": ("run", str),
    "dataset.test_limit": (0, int),
    "synth.classes": (2, int),
    "synth.per_class": (20, int),
    "synth.test_per_class": (100, int),
    "synth.dim": (2, int),
    "synth.separation": (10.0, float),
    "synth.sigma": (0.05, float),
    "model.input_shape": ((2,), _int_list),
    "model.layers": ("dense(2,16) relu dense(16,2)", str),
    "challenger.alpha": (0.5, float),
    "challenger.beta": (0.5, float),
    "challenger.n_features": (None, _auto_int),
    "challenger.top_k": (5, int),
    "challenger.split": ((0.25, 0.25, 0.5), _float_list),
    "challenger.epsilon": (1e-2, float),
    "challenger.sign_stabilization": (True, _bool),
    "challenger.start": ("logit", str),
    "challenger.clip": (False, _bool),
    "adversarial.eps": (0.1, float),
    "adversarial.pgd_step": (0.025, float),
    "adversarial.pgd_iters": (7, int),
    "optim.lr": (1e-3, float),
    "train.steps": (200, int),
    "train.batch_size": (32, int),
    "train.eval_every": (0, int),
    "output.reliability": (False, _bool),
    "seeds": ((0,), _int_list),
    "out": ("runs", str),
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (d, _) in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def with_values(self, **updates) -> "ExperimentConfig":
        """Copy with ``dotted__key=value`` overrides (``__`` stands for ``.``)."""
        values = dict(self.values)
        for key, value in updates.items():
            key = key.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = value
        return ExperimentConfig(values)

    # -- text form --

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values = {k: d for k, (d, _) in SCHEMA.items()}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                values[key] = SCHEMA[key][1](value)
                if key == "model.layers":
                    parse_layers(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        return cls(values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read())

    def to_text(self) -> str:
        return "".join(f"{key} = {_fmt(self.values[key])}\n" for key in SCHEMA)

    def digest(self) -> str:
        """SHA-256 of the canonical text, leaving out the output directory."""
        text = "".join(line for line in self.to_text().splitlines(True) if not line.startswith("out ="))
        return hashlib.sha256(text.encode()).hexdigest()

    # -- typed views --

    @property
    def layers(self) -> tuple:
        return parse_layers(self["model.layers"])

    @property
    def input_shape(self) -> tuple:
        return tuple(self["model.input_shape"])

    @property
    def class_count(self) -> int:
        return self.layers[-1].out_features

    def challenger_config(self, **overrides) -> ChallengerConfig:
        cfg = ChallengerConfig(
            alpha=self["challenger.alpha"],
            beta=self["challenger.beta"],
            n_features=self["challenger.n_features"],
            top_k=self["challenger.top_k"],
            split=tuple(self["challenger.split"]),
            epsilon_rule=EpsilonRuleConfig(
                epsilon=self["challenger.epsilon"],
                sign_stabilization=self["challenger.sign_stabilization"],
                start=self["challenger.start"],
            ),
            clip_to_input_range=self["challenger.clip"],
        )
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg

    def adversarial_config(self) -> AdversarialConfig:
        return AdversarialConfig(self["adversarial.eps"], self["adversarial.pgd_step"], self["adversarial.pgd_iters"])
