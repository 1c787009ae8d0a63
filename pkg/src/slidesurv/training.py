"""Training and evaluation: Cox loss on torch tensors, stratified 5-fold CV,
early stopping, tile-sampling strategies, and the run-directory writer.

Determinism contract: with a fixed seed, single-threaded torch, and the same
data, fold assignment, sampling, initialization, batch order, and final
metrics are identical across runs.
"""

from __future__ import annotations

import copy
import logging
import math
import os
import warnings
from dataclasses import dataclass, asdict

import numpy as np
import torch
from sklearn.model_selection import StratifiedKFold, train_test_split

from .graph import (AGGRESSIVE_SUBTYPES, LEAST_AGGRESSIVE_SUBTYPES,
                    PatientRecord, TileGraph, build_tile_graph)
from .model import (GatMamba, ModelConfig, PatientTensors, apply_ablation,
                    build_model, pack_patients, patient_to_tensors,
                    save_checkpoint)
from . import survival

log = logging.getLogger(__name__)

HORIZON_DAYS = (365, 1095, 1825)
SAMPLING_STRATEGIES = ("full", "random_pct", "aggressive_only", "least_aggressive_only")
METRIC_COLUMNS = ("fold", "c_index", "auc_1y", "auc_3y", "auc_5y", "auc_mean")


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 5e-5
    weight_decay: float = 1e-4
    dropout: float = 0.3
    max_epochs: int = 200
    patience: int = 5
    folds: int = 5
    sampling: str = "full"
    sampling_pct: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.sampling not in SAMPLING_STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.sampling!r}")
        if not (0.0 < self.sampling_pct <= 100.0):
            raise ValueError("sampling_pct must be in (0, 100]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def cox_loss_torch(risks: torch.Tensor, times: torch.Tensor,
                   events: torch.Tensor) -> torch.Tensor:
    """Differentiable negative log Cox partial likelihood (Breslow ties,
    mean over events, log-sum-exp stabilized)."""
    if not bool(events.any()):
        raise ValueError("batch has no events")
    in_risk_set = times[None, :] >= times[:, None]
    masked = risks[None, :].expand(risks.shape[0], -1).masked_fill(~in_risk_set, -math.inf)
    lse = torch.logsumexp(masked, dim=1)
    return -(risks - lse)[events].mean()


def make_folds(patients: list[PatientRecord], config: TrainConfig):
    """Stratified k-fold over patients with a 75/25 train/val split of each
    fold's non-test portion (60/20/20 overall for k = 5)."""
    ids = np.array([p.patient_id for p in patients])
    y = np.array([int(p.event) for p in patients])
    if int(y.sum()) == 0:
        raise ValueError("dataset has no events")
    for cls in (0, 1):
        n_cls = int((y == cls).sum())
        if n_cls < config.folds:
            raise ValueError(
                f"event class {cls} has {n_cls} patients, fewer than {config.folds} folds")
    skf = StratifiedKFold(n_splits=config.folds, shuffle=True, random_state=config.seed)
    folds = []
    for trainval_idx, test_idx in skf.split(ids, y):
        tr_idx, va_idx = train_test_split(
            trainval_idx, test_size=0.25, random_state=config.seed,
            stratify=y[trainval_idx])
        folds.append((list(ids[tr_idx]), list(ids[va_idx]), list(ids[test_idx])))
    return folds


def sample_tiles(graph: TileGraph, strategy: str, seed: int,
                 pct: float = 100.0) -> TileGraph:
    """Keep a node subset per strategy and rebuild the graph on it.

    aggressive_only keeps subtypes {4, 5}; least_aggressive_only keeps
    {0, 1}; random_pct keeps ceil(pct*N/100) nodes drawn uniformly without
    replacement. Edges, edge features, and positional encodings are
    recomputed on the subset. An empty subset falls back to the full graph
    with a warning.
    """
    if strategy == "full":
        return graph
    n = graph.n_nodes
    if strategy == "aggressive_only":
        keep = np.flatnonzero(np.isin(graph.subtype, AGGRESSIVE_SUBTYPES))
    elif strategy == "least_aggressive_only":
        keep = np.flatnonzero(np.isin(graph.subtype, LEAST_AGGRESSIVE_SUBTYPES))
    elif strategy == "random_pct":
        m = math.ceil(pct * n / 100.0)
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(n, size=m, replace=False))
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    if keep.size == 0:
        warnings.warn(f"sampling strategy {strategy!r} left no tiles; "
                      "falling back to the full graph")
        return graph
    return build_tile_graph(graph.node_id[keep], graph.row[keep], graph.col[keep],
                            graph.subtype[keep], graph.features[keep])


def sample_dataset(patients: list[PatientRecord], config: TrainConfig) -> list[PatientRecord]:
    if config.sampling == "full":
        return patients
    out = []
    for pi, p in enumerate(patients):
        graphs = []
        for gi, g in enumerate(p.graphs):
            seed = int(np.random.SeedSequence([config.seed, pi, gi]).generate_state(1)[0])
            graphs.append(sample_tiles(g, config.sampling, seed, config.sampling_pct))
        out.append(PatientRecord(p.patient_id, graphs, p.event, p.time_days))
    return out


def weight_decay_groups(model: GatMamba, weight_decay: float):
    """Two AdamW parameter groups: matrices get decoupled weight decay,
    vectors and scalars (biases, batch-norm scale/shift) are exempt."""
    decay = [p for p in model.parameters() if p.ndim > 1]
    no_decay = [p for p in model.parameters() if p.ndim <= 1]
    return [{"params": decay, "weight_decay": weight_decay},
            {"params": no_decay, "weight_decay": 0.0}]


def _batch_loss(model: GatMamba, batch) -> torch.Tensor:
    risks = model(batch)
    return cox_loss_torch(risks, batch.times, batch.events)


def train_fold(model: GatMamba, train: list[PatientTensors],
               val: list[PatientTensors], config: TrainConfig):
    """AdamW + early stopping on validation Cox loss.

    Returns (best_state_dict, history); the model is left loaded with the
    best-epoch parameters. Weight decay is decoupled and excluded from
    biases and batch-norm scale/shift (every parameter with ndim <= 1).
    """
    if not any(p.event for p in train):
        raise ValueError("training set has no events")
    opt = torch.optim.AdamW(weight_decay_groups(model, config.weight_decay),
                            lr=config.lr, betas=(0.9, 0.999), eps=1e-8)

    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)  # dropout stream
    val_batch = pack_patients(val)

    history = []
    best_val = math.inf
    best_state = copy.deepcopy(model.state_dict())
    bad_epochs = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(len(train))
        model.train()
        losses = []
        for start in range(0, len(train), config.batch_size):
            idx = perm[start:start + config.batch_size]
            batch = pack_patients([train[i] for i in idx])
            if not bool(batch.events.any()):
                log.debug("epoch %d: skipping event-free batch", epoch)
                continue
            opt.zero_grad()
            loss = _batch_loss(model, batch)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        model.eval()
        with torch.no_grad():
            val_loss = float(_batch_loss(model, val_batch))
        train_loss = float(np.mean(losses)) if losses else math.nan
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_state = copy.deepcopy(model.state_dict())
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    model.load_state_dict(best_state)
    return best_state, history


def evaluate_fold(model: GatMamba, test: list[PatientTensors]):
    """Test-set risks in eval mode, one patient at a time, plus the metric
    row: C-index and dynamic AUC at 1/3/5 years with their mean."""
    risks = np.array([model.predict_risk(p) for p in test])
    times = np.array([p.time_days for p in test])
    events = np.array([p.event for p in test])
    aucs = [survival.dynamic_auc(risks, times, events, h) for h in HORIZON_DAYS]
    metrics = {
        "c_index": survival.c_index(risks, times, events),
        "auc_1y": aucs[0], "auc_3y": aucs[1], "auc_5y": aucs[2],
        "auc_mean": float(np.mean(aucs)),
    }
    return metrics, risks


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def run_cv(patients: list[PatientRecord], model_cfg: ModelConfig,
           train_cfg: TrainConfig, out_dir, ablation: str = "full") -> dict:
    """Full cross-validated run; writes the run directory and returns the
    metric summary (mean over folds)."""
    torch.set_num_threads(1)
    os.makedirs(out_dir, exist_ok=True)
    model_cfg = apply_ablation(model_cfg, ablation)

    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"ablation = {ablation}\n")
        for name, cfg in (("train", train_cfg), ("model", model_cfg)):
            for k, v in asdict(cfg).items():
                fh.write(f"{name}.{k} = {v}\n")

    patients = sample_dataset(patients, train_cfg)
    by_id = {p.patient_id: patient_to_tensors(p) for p in patients}
    folds = make_folds(patients, train_cfg)

    fold_rows = []
    for k, (tr, va, te) in enumerate(folds):
        fold_rows += ([(pid, k, "train") for pid in tr]
                      + [(pid, k, "val") for pid in va]
                      + [(pid, k, "test") for pid in te])
    write_csv(os.path.join(out_dir, "folds.csv"),
              ("patient_id", "fold", "split"), fold_rows)

    metric_rows, risk_rows = [], []
    summary = {key: 0.0 for key in METRIC_COLUMNS[1:]}
    for k, (tr, va, te) in enumerate(folds):
        cfg_k = ModelConfig(**{**asdict(model_cfg), "seed": train_cfg.seed + k})
        fold_train_cfg = TrainConfig(**{**asdict(train_cfg), "seed": train_cfg.seed + k})
        model = build_model(cfg_k)
        _, history = train_fold(model, [by_id[i] for i in tr],
                                [by_id[i] for i in va], fold_train_cfg)
        write_csv(os.path.join(out_dir, f"history_{k}.csv"),
                  ("epoch", "train_loss", "val_loss"),
                  [(h["epoch"], h["train_loss"], h["val_loss"]) for h in history])
        save_checkpoint(model, os.path.join(out_dir, f"fold_{k}.pt"))
        metrics, risks = evaluate_fold(model, [by_id[i] for i in te])
        metric_rows.append((k, metrics["c_index"], metrics["auc_1y"],
                            metrics["auc_3y"], metrics["auc_5y"], metrics["auc_mean"]))
        risk_rows += [(pid, float(r), k) for pid, r in zip(te, risks)]
        for key in summary:
            summary[key] += metrics[key] / len(folds)
        log.info("fold %d: c_index %.4f", k, metrics["c_index"])

    write_csv(os.path.join(out_dir, "metrics.csv"), METRIC_COLUMNS, metric_rows)
    write_csv(os.path.join(out_dir, "risks.csv"),
              ("patient_id", "risk", "fold"), risk_rows)
    return summary
