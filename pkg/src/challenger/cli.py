"""Command line entry point: ``challenger train|sweep-topk|attribute|compare``.

Every output file is a pure function of the config and the seeds, so reruns
write byte-identical files. Failures print one JSON object on stderr and exit
with a nonzero status.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .attribution import batch_lrp, export_heatmap
from .challenger import ranked_classes
from .config import ConfigError, ExperimentConfig
from .experiments import METHODS, load_datasets, run_method
from .metrics import MetricsReport, reliability_bins
from .network import forward_traced, load_checkpoint, save_checkpoint


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of integers, got {text!r}") from None


def _write_csv(path: Path, provenance: str, header, rows) -> Path:
    with open(path, "w", newline="") as f:
        f.write(f"# {provenance}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def _provenance(cfg: ExperimentConfig, **extra) -> str:
    items = [f"config_sha256={cfg.digest()}"] + [f"{k}={v}" for k, v in extra.items()]
    return " ".join(items)


def _seeds_text(seeds) -> str:
    return ",".join(str(s) for s in seeds)


# -- subcommands ----------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, method: str, out: Path) -> list:
    """Checkpoint and step log per seed plus one metrics CSV with a row per seed."""
    seeds = cfg["seeds"]
    written, rows, header = [], [], None
    for seed in seeds:
        result = run_method(cfg, method, seed)
        stem = out / f"{method}_seed{seed}"
        ckpt = stem.with_suffix(".chlg")
        ckpt.write_bytes(save_checkpoint(result.net))
        steps_csv = stem.with_name(stem.name + "_steps.csv")
        result.log.write_csv(steps_csv, _provenance(cfg, method=method, seed=seed))
        written += [ckpt, steps_csv]
        if cfg["output.reliability"]:
            bins = reliability_bins(result.test_logits, load_datasets(cfg, seed)[1].labels)
            written.append(_write_csv(
                stem.with_name(stem.name + "_reliability.csv"), _provenance(cfg, method=method, seed=seed),
                ("bin_lo", "bin_hi", "count", "mean_confidence", "accuracy"),
                [tuple(float(v) if i != 2 else int(v) for i, v in enumerate(b)) for b in bins]))
        header = ["seed"] + result.report.columns()
        rows.append([seed] + result.report.values())
    written.append(_write_csv(out / f"{method}_metrics.csv",
                              _provenance(cfg, method=method, seeds=_seeds_text(seeds)), header, rows))
    return written


def cmd_sweep_topk(cfg: ExperimentConfig, k_values, out: Path) -> list:
    """One Challenger run per (K, seed); all K are checked before training starts."""
    n_classes = cfg.class_count
    bad = [k for k in k_values if not 1 <= k <= n_classes]
    if bad:
        raise ConfigError(f"top-k values {bad} outside [1, {n_classes}] for a {n_classes}-class model")
    rows, curve_rows, header = [], [], None
    for k in k_values:
        for seed in cfg["seeds"]:
            result = run_method(cfg, "challenger", seed, top_k=k)
            header = ["k", "seed"] + result.report.columns()
            rows.append([k, seed] + result.report.values())
            curve = result.curve or [(cfg["train.steps"], result.report.accuracy)]
            curve_rows += [[k, seed, step, acc] for step, acc in curve]
    prov = _provenance(cfg, seeds=_seeds_text(cfg["seeds"]), k_values=_seeds_text(k_values))
    return [
        _write_csv(out / "topk_metrics.csv", prov, header, rows),
        _write_csv(out / "topk_curve.csv", prov, ("k", "seed", "step", "test_accuracy"), curve_rows),
    ]


def parse_class_mode(text: str) -> int:
    """``target`` -> 0, ``rank-k`` -> k."""
    if text == "target":
        return 0
    if text.startswith("rank-") and text[5:].isdigit() and int(text[5:]) >= 1:
        return int(text[5:])
    raise ConfigError(f"class mode must be 'target' or 'rank-<k>' with k >= 1, got {text!r}")


def cmd_attribute(cfg: ExperimentConfig, checkpoint: Path, samples, class_mode: str, split: str, out: Path) -> list:
    """One heatmap CSV + PGM pair per requested sample of ``split``."""
    rank = parse_class_mode(class_mode)
    net = load_checkpoint(Path(checkpoint).read_bytes())
    train, test = load_datasets(cfg, cfg["seeds"][0])
    ds = {"train": train, "test": test}[split]
    bad = [i for i in samples if not 0 <= i < len(ds)]
    if bad:
        raise IndexError(f"sample indices {bad} outside the {split} split of size {len(ds)}")
    if rank > net.class_count:
        raise ConfigError(f"rank {rank} exceeds the model's {net.class_count} classes")
    idx = np.asarray(samples, dtype=np.int64)
    logits, trace = forward_traced(net, ds.inputs[idx])
    classes = ds.labels[idx] if rank == 0 else ranked_classes(logits, rank)
    maps = batch_lrp(net, trace, classes, cfg.challenger_config().epsilon_rule)
    written = []
    for i, rmap in zip(samples, maps):
        written += export_heatmap(rmap, out / f"{split}{i}_class{rmap.class_index}")
    return written


def cmd_compare(cfg: ExperimentConfig, methods, out: Path) -> list:
    """Mean and sample std of each metric per method, over the same seeds."""
    if len(methods) < 2:
        raise ConfigError("compare needs at least two methods")
    seeds = cfg["seeds"]
    per_method, run_rows = {}, []
    for method in methods:
        reports = [run_method(cfg, method, seed).report for seed in seeds]
        per_method[method] = np.array([[r.as_dict()[c] for c in MetricsReport.BASE_COLUMNS] for r in reports])
        run_rows += [[method, seed] + [r.as_dict()[c] for c in MetricsReport.BASE_COLUMNS]
                     for seed, r in zip(seeds, reports)]
    header = ["method", "runs"] + [f"{c}_{s}" for c in MetricsReport.BASE_COLUMNS for s in ("mean", "std")]
    rows = []
    for method, values in per_method.items():
        std = values.std(axis=0, ddof=1) if len(seeds) > 1 else np.zeros(values.shape[1])
        stats = [float(v) for pair in zip(values.mean(axis=0), std) for v in pair]
        rows.append([method, len(seeds)] + stats)
    prov = _provenance(cfg, seeds=_seeds_text(seeds), methods=",".join(methods))
    return [
        _write_csv(out / "compare.csv", prov, header, rows),
        _write_csv(out / "compare_runs.csv", prov, ["method", "seed"] + list(MetricsReport.BASE_COLUMNS), run_rows),
    ]


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="challenger", description="Relevance-guided input challenges for small-data training.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config file (key = value lines)")
        p.add_argument("--seeds", type=_int_list, help="comma separated seeds; overrides the config")
        p.add_argument("--out", help="output directory; overrides the config")

    p = sub.add_parser("train", help="train one method and evaluate it per seed")
    common(p)
    p.add_argument("--method", required=True, choices=METHODS)

    p = sub.add_parser("sweep-topk", help="Challenger runs over several top-k pool sizes")
    common(p)
    p.add_argument("--k-values", type=_int_list, required=True)

    p = sub.add_parser("attribute", help="export relevance heatmaps for selected samples")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=_int_list, required=True)
    p.add_argument("--class-mode", default="target", help="'target' or 'rank-<k>'")
    p.add_argument("--split", choices=("train", "test"), default="test")

    p = sub.add_parser("compare", help="paired comparison of several methods")
    common(p)
    p.add_argument("--method", required=True, help="comma separated methods, at least two")
    return parser


def run(argv=None) -> list:
    args = build_parser().parse_args(argv)
    cfg = ExperimentConfig.from_file(args.config)
    if args.seeds is not None:
        cfg = cfg.with_values(seeds=args.seeds)
    if args.out is not None:
        cfg = cfg.with_values(out=args.out)
    if not cfg["seeds"]:
        raise ConfigError("no seeds given")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "train":
        return cmd_train(cfg, args.method, out)
    if args.command == "sweep-topk":
        return cmd_sweep_topk(cfg, args.k_values, out)
    if args.command == "attribute":
        return cmd_attribute(cfg, Path(args.checkpoint), args.samples, args.class_mode, args.split, out)
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; expected some of {', '.join(METHODS)}")
    return cmd_compare(cfg, methods, out)


def main(argv=None) -> int:
    try:
        for path in run(argv):
            print(os.fspath(path))
    except Exception as exc:  # noqa: BLE001 - every failure becomes one JSON line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2 if isinstance(exc, (UsageError, ConfigError)) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
