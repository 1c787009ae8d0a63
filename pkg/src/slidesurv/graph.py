"""Tile-graph construction: k-NN edges, positional encodings, edge features.

Everything here is plain numpy and deterministic. A TileGraph is immutable
after construction; build graphs for different patients in parallel if you
like.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

N_SUBTYPES = 6
N_SUBTYPE_PAIRS = 21
AGGRESSIVE_SUBTYPES = (4, 5)
LEAST_AGGRESSIVE_SUBTYPES = (0, 1)
PE_DIM = 16
DEFAULT_K = 8


@dataclass(frozen=True)
class TileGraph:
    """One slide as a graph over tiles.

    Nodes are stored in canonical order (sorted by row, col, then original
    node_id), so two permutations of the same tile set build bit-identical
    graphs. Edges are directed pairs into ``nodes`` positions, symmetrized
    and including one self-loop per node.
    """

    node_id: np.ndarray      # (N,) int64, original ids
    row: np.ndarray          # (N,) int64
    col: np.ndarray          # (N,) int64
    subtype: np.ndarray      # (N,) int64 in [0, 5]
    features: np.ndarray     # (N, D) float64
    edges: np.ndarray        # (M, 2) int64 (src, dst)
    edge_cat: np.ndarray     # (M,) int64 in [0, 20]
    edge_cont: np.ndarray    # (M, 2) float64 [cosine, distance]
    pe: np.ndarray           # (N, 16) float64

    @property
    def n_nodes(self) -> int:
        return self.row.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]


@dataclass
class PatientRecord:
    patient_id: str
    graphs: list[TileGraph] = field(default_factory=list)
    event: bool = False
    time_days: float = 0.0


def build_knn_graph(coords, k: int) -> np.ndarray:
    """Directed k-NN edges over (row, col) coordinates, then symmetrized.

    Each node points to its k nearest distinct nodes by Euclidean distance,
    ties broken by ascending node index. The edge set is the union with all
    reversed edges plus one self-loop per node. With n <= k nodes every node
    connects to all others.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if n == 0:
        raise ValueError("empty graph")
    if k < 1:
        raise ValueError("k must be >= 1")

    pairs = set()
    for i in range(n):
        d2 = ((coords - coords[i]) ** 2).sum(axis=1)
        order = np.lexsort((np.arange(n), d2))  # distance first, id breaks ties
        picked = 0
        for j in order:
            if j == i:
                continue
            pairs.add((i, int(j)))
            picked += 1
            if picked == k:
                break
    for i, j in list(pairs):
        pairs.add((j, i))
    for i in range(n):
        pairs.add((i, i))

    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return edges


def positional_encoding(row: int, col: int) -> np.ndarray:
    """16-dim sinusoidal encoding: 8 entries for the row, 8 for the column.

    Within each 8-block entries alternate sin(p / 10000^(2i/8)) and
    cos(p / 10000^(2i/8)) for i = 0..3.
    """
    if row < 0 or col < 0:
        raise ValueError("coordinates must be non-negative")
    out = np.empty(PE_DIM, dtype=np.float64)
    for block, p in enumerate((row, col)):
        for i in range(4):
            angle = p / 10000.0 ** (2.0 * i / 8.0)
            out[8 * block + 2 * i] = np.sin(angle)
            out[8 * block + 2 * i + 1] = np.cos(angle)
    return out


def positional_encoding_matrix(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)[:, None]
    cols = np.asarray(cols, dtype=np.float64)[:, None]
    scale = 10000.0 ** (2.0 * np.arange(4) / 8.0)
    out = np.empty((rows.shape[0], PE_DIM), dtype=np.float64)
    out[:, 0:8:2] = np.sin(rows / scale)
    out[:, 1:8:2] = np.cos(rows / scale)
    out[:, 8:16:2] = np.sin(cols / scale)
    out[:, 9:16:2] = np.cos(cols / scale)
    return out


def subtype_pair_index(a: int, b: int) -> int:
    """Index of the unordered subtype pair {a, b} in [0, 20]."""
    if not (0 <= a < N_SUBTYPES and 0 <= b < N_SUBTYPES):
        raise ValueError(f"subtype label out of range: ({a}, {b})")
    lo, hi = (a, b) if a <= b else (b, a)
    return lo * N_SUBTYPES - lo * (lo - 1) // 2 + (hi - lo)


def edge_features(row, col, subtype, features, edges):
    """Per-edge categorical pair index and [cosine, distance] continuous pair.

    Cosine is computed on the raw input node features; a zero-norm vector
    gets cosine 0.0 (flagged in the log). Distance is Euclidean in tile-grid
    units.
    """
    subtype = np.asarray(subtype, dtype=np.int64)
    features = np.asarray(features, dtype=np.float64)
    coords = np.stack([np.asarray(row, dtype=np.float64),
                       np.asarray(col, dtype=np.float64)], axis=1)
    src, dst = edges[:, 0], edges[:, 1]

    lo = np.minimum(subtype[src], subtype[dst])
    hi = np.maximum(subtype[src], subtype[dst])
    if subtype.size and (subtype.min() < 0 or subtype.max() >= N_SUBTYPES):
        raise ValueError("subtype label out of range")
    edge_cat = lo * N_SUBTYPES - lo * (lo - 1) // 2 + (hi - lo)

    norms = np.linalg.norm(features, axis=1)
    zero = norms == 0.0
    if zero.any():
        log.warning("cosine undefined for %d zero-norm feature vectors; using 0.0",
                    int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    dots = (features[src] * features[dst]).sum(axis=1)
    cos = dots / (safe[src] * safe[dst])
    cos[zero[src] | zero[dst]] = 0.0
    cos[src == dst] = np.where(zero[src[src == dst]], 0.0, 1.0)  # exact on self-loops
    cos = np.clip(cos, -1.0, 1.0)

    dist = np.linalg.norm(coords[src] - coords[dst], axis=1)
    return edge_cat.astype(np.int64), np.stack([cos, dist], axis=1)


def build_tile_graph(node_id, row, col, subtype, features, k: int = DEFAULT_K) -> TileGraph:
    """Assemble a TileGraph from raw per-tile arrays.

    Nodes are canonically re-sorted by (row, col, node_id) before edges,
    positional encodings, and edge features are computed, so the result is
    independent of input order.
    """
    node_id = np.asarray(node_id, dtype=np.int64)
    row = np.asarray(row, dtype=np.int64)
    col = np.asarray(col, dtype=np.int64)
    subtype = np.asarray(subtype, dtype=np.int64)
    features = np.asarray(features, dtype=np.float64)
    if row.size == 0:
        raise ValueError("empty graph")
    if features.ndim != 2 or features.shape[0] != row.size:
        raise ValueError("features must be (n_nodes, d) aligned with coordinates")
    if not np.isfinite(features).all():
        raise ValueError("non-finite node features")

    coords = np.stack([row, col], axis=1)
    uniq = np.unique(coords, axis=0)
    if uniq.shape[0] != coords.shape[0]:
        raise ValueError("duplicate (row, col) tile coordinates")

    perm = np.lexsort((node_id, col, row))
    node_id, row, col = node_id[perm], row[perm], col[perm]
    subtype, features = subtype[perm], np.ascontiguousarray(features[perm])

    edges = build_knn_graph(np.stack([row, col], axis=1), k)
    edge_cat, edge_cont = edge_features(row, col, subtype, features, edges)
    pe = positional_encoding_matrix(row, col)

    g = TileGraph(node_id=node_id, row=row, col=col, subtype=subtype,
                  features=features, edges=edges, edge_cat=edge_cat,
                  edge_cont=edge_cont, pe=pe)
    for arr in (g.node_id, g.row, g.col, g.subtype, g.features,
                g.edges, g.edge_cat, g.edge_cont, g.pe):
        arr.setflags(write=False)
    return g


def canonical_order(graph: TileGraph) -> np.ndarray:
    """Permutation sorting the graph's nodes by (row, col, node_id).

    Graphs from build_tile_graph are already canonical, so this is the
    identity for them; it exists so callers can canonicalize externally
    constructed node orders.
    """
    return np.lexsort((graph.node_id, graph.col, graph.row))
