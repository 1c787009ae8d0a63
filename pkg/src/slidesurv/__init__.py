"""Hybrid graph-attention / selective state-space survival modeling for
whole-slide tile graphs."""

from .graph import (PatientRecord, TileGraph, build_knn_graph, build_tile_graph,
                    canonical_order, edge_features, positional_encoding,
                    subtype_pair_index)
from .gat import GatLayer
from .ssm import Mamba, discretize
from .model import (GatMamba, GatMambaBlock, ModelConfig, apply_ablation,
                    build_model, load_checkpoint, pack_patients,
                    patient_to_tensors, save_checkpoint)
from .survival import (SurvivalBatch, c_index, cox_loss, dynamic_auc, km_curve,
                       logrank_test, stratify_by_median)
from .training import (TrainConfig, cox_loss_torch, evaluate_fold, make_folds,
                       run_cv, sample_tiles, train_fold)
from .synthetic import SyntheticConfig, generate_synthetic
from .data import load_dataset, save_dataset

__version__ = "0.1.0"
__all__ = [
    "PatientRecord", "TileGraph", "build_knn_graph", "build_tile_graph",
    "canonical_order", "edge_features", "positional_encoding",
    "subtype_pair_index", "GatLayer", "Mamba", "discretize", "GatMamba",
    "GatMambaBlock", "ModelConfig", "apply_ablation", "build_model",
    "load_checkpoint", "pack_patients", "patient_to_tensors", "save_checkpoint",
    "SurvivalBatch", "c_index", "cox_loss", "dynamic_auc", "km_curve",
    "logrank_test", "stratify_by_median", "TrainConfig", "cox_loss_torch",
    "evaluate_fold", "make_folds", "run_cv", "sample_tiles", "train_fold",
    "SyntheticConfig", "generate_synthetic", "load_dataset", "save_dataset",
]
