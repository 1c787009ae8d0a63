"""GAT-Mamba survival model: input projections, edge embeddings, fused
block(s), pooling, and the risk head.

The forward path follows the block recipe
    X_gat   = BN(Dropout(GAT(X, E, A)))
    X_mamba = BN(Dropout(Mamba(X)))
    X_sum   = X_gat + X_mamba
    out     = BN(MLP(X_sum) + X_sum)
with per-graph mean pooling over nodes, mean over a patient's graphs, and a
small MLP mapping the patient embedding to a scalar risk.

Batches are packed: node features of all graphs are concatenated, edge
indices offset, and the Mamba scan runs over zero-padded per-graph
sequences (safe: the scan is causal and real tokens precede padding).
Batch norm runs over the packed node dimension; evaluation must use running
statistics (eval mode), which also makes per-patient evaluation independent
of batch composition.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .gat import GatLayer
from .graph import PE_DIM, N_SUBTYPE_PAIRS, PatientRecord, TileGraph, canonical_order
from .ssm import Mamba, _init_linear

DTYPE = torch.float64


@dataclass
class ModelConfig:
    d_node: int
    d_feat_hidden: int = 64
    d_pe: int = PE_DIM
    d_edge_hidden: int = 16
    n_blocks: int = 1
    mlp_hidden: int = 32
    dropout: float = 0.3
    n_gat_heads: int = 1
    leaky_slope: float = 0.2
    ssm_state: int = 16
    euler_discretization: bool = False
    use_gat: bool = True
    use_mamba: bool = True
    use_edge_features: bool = True
    use_pe: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.d_pe != PE_DIM:
            raise ValueError(f"d_pe must be {PE_DIM}")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if not (self.use_gat or self.use_mamba):
            raise ValueError("at least one of the GAT / Mamba branches must be enabled")

    @property
    def d_model(self) -> int:
        return self.d_feat_hidden + self.d_pe


ABLATIONS = ("full", "gat", "mamba", "no-edge", "no-pe")


def apply_ablation(config: ModelConfig, ablation: str) -> ModelConfig:
    """Return a copy of config with one branch or input family disabled."""
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation {ablation!r}, expected one of {ABLATIONS}")
    cfg = ModelConfig(**asdict(config))
    if ablation == "gat":
        cfg.use_mamba = False
    elif ablation == "mamba":
        cfg.use_gat = False
    elif ablation == "no-edge":
        cfg.use_edge_features = False
    elif ablation == "no-pe":
        cfg.use_pe = False
    return cfg


@dataclass
class GraphTensors:
    """A TileGraph converted to torch tensors in canonical node order."""
    x: torch.Tensor          # (N, d_node)
    pe: torch.Tensor         # (N, 16)
    edge_index: torch.Tensor  # (M, 2)
    edge_cat: torch.Tensor   # (M,)
    edge_cont: torch.Tensor  # (M, 2)

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]


@dataclass
class PatientTensors:
    patient_id: str
    graphs: list[GraphTensors]
    event: bool
    time_days: float


@dataclass
class PackedBatch:
    """Several patients' graphs packed into flat tensors."""
    x: torch.Tensor
    pe: torch.Tensor
    edge_index: torch.Tensor
    edge_cat: torch.Tensor
    edge_cont: torch.Tensor
    graph_lengths: torch.Tensor    # (G,) nodes per graph
    graph_to_patient: torch.Tensor  # (G,)
    n_patients: int
    times: torch.Tensor            # (P,)
    events: torch.Tensor           # (P,) bool


def graph_to_tensors(graph: TileGraph) -> GraphTensors:
    perm = canonical_order(graph)
    return GraphTensors(
        x=torch.from_numpy(graph.features[perm].copy()).to(DTYPE),
        pe=torch.from_numpy(graph.pe[perm].copy()).to(DTYPE),
        edge_index=torch.from_numpy(_remap_edges(graph.edges, perm)),
        edge_cat=torch.from_numpy(graph.edge_cat.copy()).long(),
        edge_cont=torch.from_numpy(graph.edge_cont.copy()).to(DTYPE),
    )


def _remap_edges(edges: np.ndarray, perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv[edges].astype(np.int64)


def patient_to_tensors(p: PatientRecord) -> PatientTensors:
    if not p.graphs:
        raise ValueError(f"patient {p.patient_id} has no graphs")
    if any(g.n_nodes == 0 for g in p.graphs):
        raise ValueError("empty graph")
    return PatientTensors(p.patient_id, [graph_to_tensors(g) for g in p.graphs],
                          bool(p.event), float(p.time_days))


def pack_patients(patients: list[PatientTensors]) -> PackedBatch:
    xs, pes, eis, ecats, econts, lengths, g2p = [], [], [], [], [], [], []
    offset = 0
    for pi, pat in enumerate(patients):
        for g in pat.graphs:
            xs.append(g.x)
            pes.append(g.pe)
            eis.append(g.edge_index + offset)
            ecats.append(g.edge_cat)
            econts.append(g.edge_cont)
            lengths.append(g.n_nodes)
            g2p.append(pi)
            offset += g.n_nodes
    return PackedBatch(
        x=torch.cat(xs), pe=torch.cat(pes), edge_index=torch.cat(eis),
        edge_cat=torch.cat(ecats), edge_cont=torch.cat(econts),
        graph_lengths=torch.tensor(lengths, dtype=torch.long),
        graph_to_patient=torch.tensor(g2p, dtype=torch.long),
        n_patients=len(patients),
        times=torch.tensor([p.time_days for p in patients], dtype=DTYPE),
        events=torch.tensor([p.event for p in patients], dtype=torch.bool),
    )


def _pad_by_length(x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    return nn.utils.rnn.pad_sequence(list(torch.split(x, lengths.tolist())),
                                     batch_first=True)


def _unpad(y: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    return torch.cat([y[i, :n] for i, n in enumerate(lengths.tolist())])


def _segment_mean(x: torch.Tensor, seg: torch.Tensor, n_seg: int) -> torch.Tensor:
    out = x.new_zeros(n_seg, x.shape[1]).index_add_(0, seg, x)
    counts = torch.bincount(seg, minlength=n_seg).clamp(min=1).to(x.dtype)
    return out / counts[:, None]


class GatMambaBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.cfg = cfg
        if cfg.use_gat:
            self.gat = GatLayer(d, d, cfg.d_edge_hidden, heads=cfg.n_gat_heads,
                                leaky_slope=cfg.leaky_slope, dtype=DTYPE)
            self.bn_gat = nn.BatchNorm1d(d, dtype=DTYPE)
        if cfg.use_mamba:
            self.mamba = Mamba(d, d_state=cfg.ssm_state,
                               euler_discretization=cfg.euler_discretization, dtype=DTYPE)
            self.bn_mamba = nn.BatchNorm1d(d, dtype=DTYPE)
        self.dropout = nn.Dropout(cfg.dropout)
        self.mlp = nn.Sequential(nn.Linear(d, d, dtype=DTYPE), nn.ReLU(),
                                 nn.Linear(d, d, dtype=DTYPE))
        self.bn_out = nn.BatchNorm1d(d, dtype=DTYPE)

    def reset_parameters(self, gen: torch.Generator) -> None:
        if self.cfg.use_gat:
            self.gat.reset_parameters(gen)
            _reset_bn(self.bn_gat)
        if self.cfg.use_mamba:
            self.mamba.reset_parameters(gen)
            _reset_bn(self.bn_mamba)
        _init_linear(self.mlp[0], gen)
        _init_linear(self.mlp[2], gen)
        _reset_bn(self.bn_out)

    def forward(self, x, edge_index, edge_attr, graph_lengths):
        x_sum = None
        if self.cfg.use_gat:
            xg = self.bn_gat(self.dropout(self.gat(x, edge_index, edge_attr)))
            _check_finite(xg, "gat")
            x_sum = xg
        if self.cfg.use_mamba:
            padded = _pad_by_length(x, graph_lengths)
            xm = _unpad(self.mamba(padded), graph_lengths)
            xm = self.bn_mamba(self.dropout(xm))
            _check_finite(xm, "mamba")
            x_sum = xm if x_sum is None else x_sum + xm
        out = self.bn_out(self.mlp(x_sum) + x_sum)
        _check_finite(out, "mlp")
        return out


def _check_finite(t: torch.Tensor, branch: str) -> None:
    if not torch.isfinite(t).all():
        raise ValueError(f"non-finite values in {branch} branch")


def _reset_bn(bn: nn.BatchNorm1d) -> None:
    with torch.no_grad():
        bn.weight.fill_(1.0)
        bn.bias.fill_(0.0)
    bn.reset_running_stats()


class GatMamba(nn.Module):
    """Full pipeline from tile graphs to a per-patient risk score."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.l_node = nn.Linear(cfg.d_node, cfg.d_feat_hidden, dtype=DTYPE)
        self.eb_cat = nn.Embedding(N_SUBTYPE_PAIRS, cfg.d_edge_hidden, dtype=DTYPE)
        self.l_edge = nn.Linear(2, cfg.d_edge_hidden, dtype=DTYPE)
        self.blocks = nn.ModuleList(GatMambaBlock(cfg) for _ in range(cfg.n_blocks))
        self.head = nn.Sequential(nn.Linear(cfg.d_model, cfg.mlp_hidden, dtype=DTYPE),
                                  nn.ReLU(),
                                  nn.Linear(cfg.mlp_hidden, 1, dtype=DTYPE))
        self.reset_parameters(cfg.seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        _init_linear(self.l_node, gen)
        with torch.no_grad():
            self.eb_cat.weight.normal_(0.0, 0.02, generator=gen)
        _init_linear(self.l_edge, gen)
        for block in self.blocks:
            block.reset_parameters(gen)
        _init_linear(self.head[0], gen)
        _init_linear(self.head[2], gen)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, batch: PackedBatch) -> torch.Tensor:
        """Risk scores for a packed batch, shape (n_patients,)."""
        cfg = self.cfg
        xh = self.l_node(batch.x)
        pe = batch.pe if cfg.use_pe else torch.zeros_like(batch.pe)
        x = torch.cat([xh, pe], dim=1)
        if cfg.use_edge_features:
            e = self.eb_cat(batch.edge_cat) + self.l_edge(batch.edge_cont)
        else:
            e = batch.x.new_zeros(batch.edge_cat.shape[0], cfg.d_edge_hidden)
        for block in self.blocks:
            x = block(x, batch.edge_index, e, batch.graph_lengths)

        node_to_graph = torch.repeat_interleave(
            torch.arange(batch.graph_lengths.numel()), batch.graph_lengths)
        graph_emb = _segment_mean(x, node_to_graph, batch.graph_lengths.numel())
        patient_emb = _segment_mean(graph_emb, batch.graph_to_patient, batch.n_patients)
        risk = self.head(patient_emb).squeeze(-1)
        _check_finite(risk, "head")
        return risk

    def predict_risk(self, patient: PatientTensors) -> float:
        """Eval-mode risk for one patient (batch-composition independent)."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                risk = self.forward(pack_patients([patient]))
        finally:
            self.train(was_training)
        return float(risk[0])


def build_model(cfg: ModelConfig) -> GatMamba:
    return GatMamba(cfg)


def save_checkpoint(model: GatMamba, path) -> None:
    torch.save({"config": asdict(model.cfg), "seed": model.cfg.seed,
                "state_dict": model.state_dict()}, path)


def load_checkpoint(path) -> GatMamba:
    payload = torch.load(path, weights_only=False)
    model = GatMamba(ModelConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
