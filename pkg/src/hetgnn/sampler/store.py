"""In-memory graph store with forward and reverse CSR adjacency.

Node tables are rows with a "#id" column plus features; edge tables are rows
with "source_id" and "target_id" plus features. Tables load from CSV (cells
of non-scalar features hold JSON arrays) or NDJSON.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from typing import Mapping, Optional, Sequence

import numpy as np

from hetgnn.graph_schema import FeatureSpec, GraphSchema
from hetgnn.graph_tensor import RaggedFeature

ID = "#id"
SOURCE_ID = "source_id"
TARGET_ID = "target_id"

_NP_DTYPES = {"float32": np.float32, "int64": np.int64}


class StoreError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class CSR:
    """Row r's entries are positions offsets[r]:offsets[r+1] of `neighbors` and `edge_ids`."""

    offsets: np.ndarray
    neighbors: np.ndarray
    edge_ids: np.ndarray

    def degree(self, row: int) -> int:
        return int(self.offsets[row + 1] - self.offsets[row])


def build_csr(rows: np.ndarray, cols: np.ndarray, num_rows: int) -> CSR:
    """Groups edges by `rows`, keeping input order within a row."""
    order = np.argsort(rows, kind="stable")
    counts = np.bincount(rows, minlength=num_rows)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return CSR(offsets, cols[order].astype(np.int64), order.astype(np.int64))


@dataclasses.dataclass(frozen=True)
class NodeTable:
    ids: tuple
    index: Mapping[str, int]
    features: Mapping[str, object]

    @property
    def size(self) -> int:
        return len(self.ids)


@dataclasses.dataclass(frozen=True)
class EdgeTable:
    source_set: str
    target_set: str
    source: np.ndarray
    target: np.ndarray
    features: Mapping[str, object]
    forward: CSR
    reverse: CSR

    @property
    def size(self) -> int:
        return int(self.source.shape[0])

    def csr(self, direction: str) -> CSR:
        if direction == "forward":
            return self.forward
        if direction == "reverse":
            return self.reverse
        raise StoreError(f"direction must be 'forward' or 'reverse', got {direction!r}")

    def origin_set(self, direction: str) -> str:
        return self.source_set if direction == "forward" else self.target_set

    def far_set(self, direction: str) -> str:
        return self.target_set if direction == "forward" else self.source_set


@dataclasses.dataclass(frozen=True)
class GraphStore:
    schema: GraphSchema
    node_sets: Mapping[str, NodeTable]
    edge_sets: Mapping[str, EdgeTable]


def _cell(spec: FeatureSpec, raw):
    """Parses one table cell according to its feature spec."""
    if isinstance(raw, str) and (spec.shape or spec.dtype != "string"):
        text = raw.strip()
        if spec.shape:
            raw = json.loads(text) if text else []
        elif spec.dtype == "int64":
            raw = int(text)
        else:
            raw = float(text)
    return raw


def _column(spec: FeatureSpec, values: list, where: str):
    try:
        if spec.is_ragged:
            inner = tuple(spec.shape[1:])
            dtype = object if spec.dtype == "string" else _NP_DTYPES[spec.dtype]
            return RaggedFeature.from_rows(values, dtype=dtype, inner_shape=inner)
        if spec.dtype == "string":
            out = np.empty((len(values),) + tuple(spec.shape), dtype=object)
            for i, v in enumerate(values):
                out[i] = v if not spec.shape else np.asarray(v, dtype=object)
            return out
        arr = np.asarray(values, dtype=_NP_DTYPES[spec.dtype]).reshape((len(values),) + tuple(spec.shape))
        return arr
    except (ValueError, TypeError) as e:
        raise StoreError(f"{where}: cannot convert values to {spec.dtype}{list(spec.shape)}: {e}") from None


def _features(specs: Mapping[str, FeatureSpec], rows: Sequence[Mapping], where: str, skip=()) -> dict:
    out = {}
    for name, spec in specs.items():
        if name in skip:
            continue
        values = []
        for i, row in enumerate(rows):
            if name not in row:
                raise StoreError(f"{where}: row {i} lacks feature {name!r}")
            values.append(_cell(spec, row[name]))
        out[name] = _column(spec, values, f"{where}.{name}")
    return out


def build_graph_store(schema: GraphSchema, node_tables: Mapping[str, Sequence[Mapping]],
                      edge_tables: Mapping[str, Sequence[Mapping]]) -> GraphStore:
    """Indexes nodes in table order and builds forward and reverse CSR per edge set."""
    nodes = {}
    for name, spec in schema.node_sets.items():
        if name not in node_tables:
            raise StoreError(f"no node table for node set {name!r}")
        rows = node_tables[name]
        ids = []
        index: dict[str, int] = {}
        for i, row in enumerate(rows):
            if ID not in row:
                raise StoreError(f"node set {name!r}: row {i} has no {ID!r} column")
            node_id = str(row[ID])
            if node_id in index:
                raise StoreError(f"node set {name!r}: duplicate node id {node_id!r}")
            index[node_id] = i
            ids.append(node_id)
        feats = _features(spec.features, rows, f"node set {name!r}", skip=(ID,))
        if ID in spec.features:
            feats[ID] = _column(spec.features[ID], ids, f"node set {name!r}.{ID}")
        nodes[name] = NodeTable(tuple(ids), index, feats)
    edges = {}
    for name, spec in schema.edge_sets.items():
        rows = edge_tables.get(name, [])
        src_index, tgt_index = nodes[spec.source].index, nodes[spec.target].index
        src = np.empty(len(rows), dtype=np.int64)
        tgt = np.empty(len(rows), dtype=np.int64)
        for i, row in enumerate(rows):
            for col, lookup, out, set_name in ((SOURCE_ID, src_index, src, spec.source),
                                                (TARGET_ID, tgt_index, tgt, spec.target)):
                if col not in row:
                    raise StoreError(f"edge set {name!r}: row {i} has no {col!r} column")
                node_id = str(row[col])
                if node_id not in lookup:
                    raise StoreError(f"edge set {name!r}: row {i} {col} {node_id!r} is not a node of {set_name!r}")
                out[i] = lookup[node_id]
        feats = _features(spec.features, rows, f"edge set {name!r}")
        n_src, n_tgt = nodes[spec.source].size, nodes[spec.target].size
        edges[name] = EdgeTable(spec.source, spec.target, src, tgt, feats,
                                build_csr(src, tgt, n_src), build_csr(tgt, src, n_tgt))
    unknown = set(edge_tables) - set(schema.edge_sets)
    if unknown:
        raise StoreError(f"edge tables for unknown edge sets {sorted(unknown)}")
    return GraphStore(schema, nodes, edges)


def read_table(path: str) -> list[dict]:
    """Rows of a .csv or .ndjson/.jsonl file as dicts."""
    ext = os.path.splitext(path)[1].lower()
    try:
        with open(path, encoding="utf-8", newline="") as f:
            if ext == ".csv":
                return [dict(row) for row in csv.DictReader(f)]
            if ext in (".ndjson", ".jsonl", ".json"):
                rows = []
                for lineno, line in enumerate(f, start=1):
                    if line.strip():
                        try:
                            rows.append(json.loads(line))
                        except json.JSONDecodeError as e:
                            raise StoreError(f"{path}:{lineno}: {e.msg}") from None
                return rows
    except OSError as e:
        raise StoreError(f"cannot read table {path}: {e}") from None
    raise StoreError(f"{path}: unsupported table format {ext!r} (use .csv or .ndjson)")


def parse_table_args(specs: Sequence[str]) -> dict[str, str]:
    """Parses "set_name=path" arguments."""
    out = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise StoreError(f"table argument {spec!r} must look like name=path")
        out[name] = path
    return out


def load_graph_store(schema: GraphSchema, node_paths: Mapping[str, str],
                     edge_paths: Optional[Mapping[str, str]] = None) -> GraphStore:
    node_tables = {name: read_table(path) for name, path in node_paths.items()}
    edge_tables = {name: read_table(path) for name, path in (edge_paths or {}).items()}
    return build_graph_store(schema, node_tables, edge_tables)
