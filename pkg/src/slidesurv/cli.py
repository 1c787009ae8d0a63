"""Command-line interface.

Subcommands: gen-synthetic, build-graph, train, evaluate, sample-tiles,
stratify. Each reads an optional `key = value` config file plus flag
overrides and writes its outputs to a run directory. Exit code 0 on
success, 1 with a one-line diagnostic on failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import asdict, fields

import numpy as np
import torch

from . import data, survival, synthetic, training
from .model import ModelConfig, load_checkpoint, patient_to_tensors
from .training import TrainConfig, write_csv


def read_config_file(path) -> dict[str, str]:
    """Parse a UTF-8 `key = value` file; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}, line {ln}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _coerce(text: str, default):
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        parts = [p.strip() for p in text.split(",")]
        elem = default[0]
        return tuple(_coerce(p, elem) for p in parts)
    return text


def apply_config(cfg, overrides: dict[str, str], used: set[str]):
    """Apply matching keys from a flat override dict onto a dataclass."""
    values = asdict(cfg)
    for f in fields(cfg):
        if f.name in overrides:
            values[f.name] = _coerce(overrides[f.name], values[f.name])
            used.add(f.name)
    return type(cfg)(**values)


def _load_overrides(args) -> dict[str, str]:
    return read_config_file(args.config) if getattr(args, "config", None) else {}


def _check_used(overrides: dict[str, str], used: set[str]) -> None:
    unknown = sorted(set(overrides) - used)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")


def _read_folds_csv(run_dir) -> dict[int, dict[str, list[str]]]:
    folds: dict[int, dict[str, list[str]]] = {}
    with open(os.path.join(run_dir, "folds.csv"), encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            fold = int(rec["fold"])
            folds.setdefault(fold, {"train": [], "val": [], "test": []})
            folds[fold][rec["split"]].append(rec["patient_id"])
    return folds


def cmd_gen_synthetic(args) -> int:
    overrides = _load_overrides(args)
    used: set[str] = set()
    cfg = apply_config(synthetic.SyntheticConfig(), overrides, used)
    _check_used(overrides, used)
    if args.patients is not None:
        cfg = synthetic.SyntheticConfig(**{**asdict(cfg), "n_patients": args.patients})
    if args.seed is not None:
        cfg = synthetic.SyntheticConfig(**{**asdict(cfg), "seed": args.seed})
    synthetic.generate_synthetic(cfg, args.out)
    print(f"wrote {cfg.n_patients} patients to {args.out}")
    return 0


def cmd_build_graph(args) -> int:
    g = data.read_nodes_csv(args.nodes, k=args.k)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "edges.csv"),
              ("src", "dst", "edge_cat", "cosine", "distance"),
              [(int(s), int(d), int(c), float(co), float(di))
               for (s, d), c, (co, di) in zip(g.edges, g.edge_cat, g.edge_cont)])
    write_csv(os.path.join(args.out, "pe.csv"),
              ("node_id",) + tuple(f"pe{i}" for i in range(g.pe.shape[1])),
              [(int(g.node_id[i]),) + tuple(float(v) for v in g.pe[i])
               for i in range(g.n_nodes)])
    print(f"{g.n_nodes} nodes, {g.n_edges} edges")
    return 0


def _configs_from_args(args, d_node: int):
    overrides = _load_overrides(args)
    used: set[str] = set()
    train_cfg = apply_config(TrainConfig(), overrides, used)
    model_cfg = apply_config(ModelConfig(d_node=d_node), overrides, used)
    _check_used(overrides, used)
    tweaks = {}
    if args.seed is not None:
        tweaks["seed"] = args.seed
    if args.folds is not None:
        tweaks["folds"] = args.folds
    if args.sampling is not None:
        tweaks["sampling"] = args.sampling
    if args.pct is not None:
        tweaks["sampling_pct"] = args.pct
    if tweaks:
        train_cfg = TrainConfig(**{**asdict(train_cfg), **tweaks})
    model_cfg = ModelConfig(**{**asdict(model_cfg),
                               "dropout": train_cfg.dropout,
                               "seed": train_cfg.seed})
    return train_cfg, model_cfg


def cmd_train(args) -> int:
    patients = data.load_dataset(args.data)
    d_node = patients[0].graphs[0].features.shape[1]
    train_cfg, model_cfg = _configs_from_args(args, d_node)
    summary = training.run_cv(patients, model_cfg, train_cfg, args.out,
                              ablation=args.ablation)
    print(f"mean test c_index {summary['c_index']:.4f} over {train_cfg.folds} folds")
    return 0


def cmd_evaluate(args) -> int:
    patients = data.load_dataset(args.data)
    by_id = {p.patient_id: patient_to_tensors(p) for p in patients}
    folds = _read_folds_csv(args.run)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for k in sorted(folds):
        model = load_checkpoint(os.path.join(args.run, f"fold_{k}.pt"))
        metrics, _ = training.evaluate_fold(
            model, [by_id[i] for i in folds[k]["test"]])
        rows.append((k, metrics["c_index"], metrics["auc_1y"], metrics["auc_3y"],
                     metrics["auc_5y"], metrics["auc_mean"]))
    write_csv(os.path.join(args.out, "metrics.csv"), training.METRIC_COLUMNS, rows)
    print(f"wrote metrics for {len(rows)} folds")
    return 0


def cmd_sample_tiles(args) -> int:
    patients = data.load_dataset(args.data)
    cfg = TrainConfig(sampling=args.sampling, sampling_pct=args.pct,
                      seed=args.seed if args.seed is not None else 0)
    sampled = training.sample_dataset(patients, cfg)
    data.save_dataset(sampled, args.out)
    print(f"wrote {len(sampled)} sampled patients to {args.out}")
    return 0


def cmd_stratify(args) -> int:
    patients = data.load_dataset(args.data)
    by_id = {p.patient_id: patient_to_tensors(p) for p in patients}
    folds = _read_folds_csv(args.run)
    os.makedirs(args.out, exist_ok=True)
    group_rows = []
    lows, highs = [], []
    for k in sorted(folds):
        model = load_checkpoint(os.path.join(args.run, f"fold_{k}.pt"))
        train_risks = [model.predict_risk(by_id[i]) for i in folds[k]["train"]]
        test_ids = folds[k]["test"]
        test_risks = [model.predict_risk(by_id[i]) for i in test_ids]
        labels = survival.stratify_by_median(train_risks, test_risks)
        for pid, risk, label in zip(test_ids, test_risks, labels):
            group_rows.append((pid, k, risk, label))
            (highs if label == "high" else lows).append(by_id[pid])
    write_csv(os.path.join(args.out, "groups.csv"),
              ("patient_id", "fold", "risk", "group"), group_rows)
    for name, group in (("low", lows), ("high", highs)):
        if not group:
            raise ValueError(f"stratification produced an empty {name}-risk group")
        curve = survival.km_curve([p.time_days for p in group],
                                  [p.event for p in group])
        write_csv(os.path.join(args.out, f"km_{name}.csv"),
                  ("time_days", "survival"), [tuple(r) for r in curve])
    chi2, p = survival.logrank_test(
        [p.time_days for p in lows], [p.event for p in lows],
        [p.time_days for p in highs], [p.event for p in highs])
    with open(os.path.join(args.out, "logrank.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"chi_square = {chi2:.17g}\np_value = {p:.17g}\n")
    print(f"log-rank chi2 {chi2:.4f}, p {p:.3g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slidesurv",
                                 description="tile-graph survival modeling")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("gen-synthetic", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--patients", type=int, default=None)
    p.set_defaults(fn=cmd_gen_synthetic)

    p = sub.add_parser("build-graph", help="build one tile graph from nodes.csv")
    common(p)
    p.add_argument("--nodes", required=True, help="path to nodes.csv")
    p.add_argument("--k", type=int, default=8)
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("train", help="cross-validated training run")
    common(p)
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--sampling", choices=training.SAMPLING_STRATEGIES, default=None)
    p.add_argument("--pct", type=float, default=None)
    p.add_argument("--ablation", choices=("full", "gat", "mamba", "no-edge", "no-pe"),
                   default="full")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="re-evaluate checkpoints on test folds")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, help="training run directory")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("sample-tiles", help="write a tile-sampled copy of a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--sampling", choices=training.SAMPLING_STRATEGIES, required=True)
    p.add_argument("--pct", type=float, default=100.0)
    p.set_defaults(fn=cmd_sample_tiles)

    p = sub.add_parser("stratify", help="median-risk groups, KM curves, log-rank")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True)
    p.set_defaults(fn=cmd_stratify)
    return ap


def main(argv=None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
