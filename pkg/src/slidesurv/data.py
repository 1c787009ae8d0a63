"""CSV dataset layout: one patients.csv (patient_id, graph_dir, event,
time_days) plus a nodes.csv per graph (node_id,row,col,subtype,f0..f{D-1}).

Floats are serialized with 17 significant digits so a save/load round trip
is exact. Validation errors name the offending file and line.
"""

from __future__ import annotations

import csv
import math
import os

import numpy as np

from .graph import N_SUBTYPES, PatientRecord, TileGraph, build_tile_graph

PATIENT_COLUMNS = ("patient_id", "graph_dir", "event", "time_days")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_dataset(patients: list[PatientRecord], root) -> None:
    os.makedirs(root, exist_ok=True)
    rows = []
    for p in patients:
        for gi, g in enumerate(p.graphs):
            gdir = os.path.join("graphs", f"{p.patient_id}_g{gi}")
            rows.append((p.patient_id, gdir, int(p.event), _fmt(p.time_days)))
            _write_nodes_csv(os.path.join(root, gdir, "nodes.csv"), g)
    with open(os.path.join(root, "patients.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PATIENT_COLUMNS)
        w.writerows(rows)


def _write_nodes_csv(path, g: TileGraph) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    d = g.features.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "row", "col", "subtype"] + [f"f{i}" for i in range(d)])
        for i in range(g.n_nodes):
            w.writerow([int(g.node_id[i]), int(g.row[i]), int(g.col[i]),
                        int(g.subtype[i])] + [_fmt(v) for v in g.features[i]])


def read_nodes_csv(path, k: int = 8) -> TileGraph:
    """Parse one nodes.csv and build its TileGraph."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        base = ["node_id", "row", "col", "subtype"]
        if header[:4] != base:
            raise ValueError(f"{path}: missing columns, expected header to start "
                             f"with {','.join(base)}")
        n_feat = len(header) - 4
        if n_feat < 1 or header[4:] != [f"f{i}" for i in range(n_feat)]:
            raise ValueError(f"{path}: feature columns must be f0..f{{D-1}}")
        node_id, row, col, subtype, feats = [], [], [], [], []
        for ln, parts in enumerate(reader, start=2):
            if not parts:
                continue
            if len(parts) != 4 + n_feat:
                raise ValueError(f"{path}, line {ln}: expected {4 + n_feat} fields, "
                                 f"got {len(parts)}")
            try:
                nid, r, c, s = (int(parts[0]), int(parts[1]), int(parts[2]),
                                int(parts[3]))
            except ValueError:
                raise ValueError(f"{path}, line {ln}: non-integer node fields") from None
            if not (0 <= s < N_SUBTYPES):
                raise ValueError(f"{path}, line {ln}: subtype label out of range: {s}")
            try:
                f = [float(v) for v in parts[4:]]
            except ValueError:
                raise ValueError(f"{path}, line {ln}: non-numeric feature") from None
            if not all(math.isfinite(v) for v in f):
                raise ValueError(f"{path}, line {ln}: non-finite feature")
            node_id.append(nid)
            row.append(r)
            col.append(c)
            subtype.append(s)
            feats.append(f)
    if not node_id:
        raise ValueError(f"{path}: no nodes")
    try:
        return build_tile_graph(node_id, row, col, subtype,
                                np.array(feats, dtype=np.float64), k=k)
    except ValueError as e:
        raise ValueError(f"{path}: {e}") from None


def load_dataset(root, k: int = 8) -> list[PatientRecord]:
    path = os.path.join(root, "patients.csv")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: no patients") from None
        if header != list(PATIENT_COLUMNS):
            raise ValueError(f"{path}: missing columns, expected "
                             f"{','.join(PATIENT_COLUMNS)}")
        patients: dict[str, PatientRecord] = {}
        n_rows = 0
        for ln, parts in enumerate(reader, start=2):
            if not parts:
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}, line {ln}: expected 4 fields")
            pid, gdir, event_s, time_s = parts
            if event_s not in ("0", "1"):
                raise ValueError(f"{path}, line {ln}: event must be 0 or 1")
            try:
                time_days = float(time_s)
            except ValueError:
                raise ValueError(f"{path}, line {ln}: bad time_days") from None
            if not (math.isfinite(time_days) and time_days > 0):
                raise ValueError(f"{path}, line {ln}: time_days must be positive")
            graph = read_nodes_csv(os.path.join(root, gdir, "nodes.csv"), k=k)
            rec = patients.get(pid)
            if rec is None:
                patients[pid] = PatientRecord(pid, [graph], event_s == "1", time_days)
            else:
                if rec.event != (event_s == "1") or rec.time_days != time_days:
                    raise ValueError(f"{path}, line {ln}: inconsistent outcome for "
                                     f"patient {pid}")
                rec.graphs.append(graph)
            n_rows += 1
    if n_rows == 0:
        raise ValueError(f"{path}: no patients")
    return list(patients.values())
