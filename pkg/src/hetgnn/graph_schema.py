"""Graph schemas: which node sets, edge sets and features a dataset has.

Schemas are JSON documents::

    {"node_sets": {"users": {"features": {"age": {"dtype": "int64", "shape": []}}}},
     "edge_sets": {"purchased": {"source": "items", "target": "users", "features": {}}},
     "context": {"features": {"scores": {"dtype": "float32", "shape": [4]}}}}

A shape lists the per-item feature dims; -1 marks a ragged (per-item
variable) dimension, which is only allowed in the leading position.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Mapping, Optional

import numpy as np

from hetgnn.core.rng import fnv1a64
from hetgnn.core.tape import Var
from hetgnn.graph_tensor import GraphTensor, RaggedFeature

DTYPES = ("float32", "int64", "string")
RAGGED = -1


class SchemaError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class FeatureSpec:
    name: str
    dtype: str
    shape: tuple = ()

    @property
    def is_ragged(self) -> bool:
        return RAGGED in self.shape

    def to_json(self) -> dict:
        return {"dtype": self.dtype, "shape": list(self.shape)}


@dataclasses.dataclass(frozen=True)
class NodeSetSpec:
    features: Mapping[str, FeatureSpec]
    metadata: Mapping = dataclasses.field(default_factory=dict)


@dataclasses.dataclass(frozen=True)
class EdgeSetSpec:
    source: str
    target: str
    features: Mapping[str, FeatureSpec]
    metadata: Mapping = dataclasses.field(default_factory=dict)


@dataclasses.dataclass(frozen=True)
class GraphSchema:
    node_sets: Mapping[str, NodeSetSpec]
    edge_sets: Mapping[str, EdgeSetSpec]
    context: Mapping[str, FeatureSpec]

    def fingerprint(self) -> int:
        return schema_fingerprint(self)

    def features_of(self, set_name: str) -> Mapping[str, FeatureSpec]:
        if set_name in self.node_sets:
            return self.node_sets[set_name].features
        if set_name in self.edge_sets:
            return self.edge_sets[set_name].features
        if set_name == "context":
            return self.context
        raise SchemaError(f"no set named {set_name!r}")


def _parse_feature(where: str, name: str, doc) -> FeatureSpec:
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: feature {name!r} must be an object")
    dtype = doc.get("dtype")
    if dtype not in DTYPES:
        raise SchemaError(f"{where}: feature {name!r} has unknown dtype {dtype!r}; expected one of {DTYPES}")
    shape = doc.get("shape", [])
    if not isinstance(shape, list) or not all(isinstance(d, int) and d >= -1 for d in shape):
        raise SchemaError(f"{where}: feature {name!r} has invalid shape {shape!r}")
    if shape.count(RAGGED) > 1 or (RAGGED in shape and shape[0] != RAGGED):
        raise SchemaError(f"{where}: feature {name!r} may only have one ragged dim, in the leading position")
    if dtype == "string" and len(shape) > 1:
        raise SchemaError(f"{where}: string feature {name!r} must be scalar or rank-1 per item")
    extra = set(doc) - {"dtype", "shape", "description"}
    if extra:
        raise SchemaError(f"{where}: feature {name!r} has unknown keys {sorted(extra)}")
    return FeatureSpec(name, dtype, tuple(shape))


def _parse_features(where: str, doc) -> dict:
    features = doc.get("features", {}) if isinstance(doc, dict) else None
    if not isinstance(features, dict):
        raise SchemaError(f"{where}: 'features' must be an object")
    return {name: _parse_feature(where, name, f) for name, f in features.items()}


def _reject_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise SchemaError(f"duplicate name {key!r}")
        out[key] = value
    return out


def parse_schema(text: str) -> GraphSchema:
    """Parses and validates a JSON schema document."""
    if not text.strip():
        raise SchemaError("no node sets: the schema document is empty")
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as e:
        raise SchemaError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return schema_from_dict(doc)


def schema_from_dict(doc) -> GraphSchema:
    if not isinstance(doc, dict):
        raise SchemaError("schema document must be a JSON object")
    unknown = set(doc) - {"node_sets", "edge_sets", "context"}
    if unknown:
        raise SchemaError(f"unknown top-level keys {sorted(unknown)}")
    node_docs = doc.get("node_sets") or {}
    if not node_docs:
        raise SchemaError("no node sets: a schema needs at least one node set")
    node_sets = {}
    for name, nd in node_docs.items():
        node_sets[name] = NodeSetSpec(_parse_features(f"node set {name!r}", nd),
                                      dict(nd.get("metadata", {})))
    edge_sets = {}
    for name, ed in (doc.get("edge_sets") or {}).items():
        if not isinstance(ed, dict):
            raise SchemaError(f"edge set {name!r} must be an object")
        if name in node_sets:
            raise SchemaError(f"edge set {name!r} reuses a node set name")
        for end in ("source", "target"):
            ref = ed.get(end)
            if ref not in node_sets:
                raise SchemaError(f"edge set {name!r}: {end} refers to unknown node set {ref!r}")
        edge_sets[name] = EdgeSetSpec(ed["source"], ed["target"],
                                      _parse_features(f"edge set {name!r}", ed),
                                      dict(ed.get("metadata", {})))
    context = _parse_features("context", doc.get("context") or {})
    return GraphSchema(node_sets, edge_sets, context)


def schema_to_dict(schema: GraphSchema) -> dict:
    def feats(fs):
        return {name: f.to_json() for name, f in fs.items()}

    def with_meta(d, meta):
        if meta:
            d["metadata"] = dict(meta)
        return d

    return {
        "node_sets": {n: with_meta({"features": feats(s.features)}, s.metadata)
                      for n, s in schema.node_sets.items()},
        "edge_sets": {n: with_meta({"source": s.source, "target": s.target, "features": feats(s.features)},
                                   s.metadata)
                      for n, s in schema.edge_sets.items()},
        "context": {"features": feats(schema.context)},
    }


def serialize_schema(schema: GraphSchema) -> str:
    """Canonical form: sorted keys, no insignificant whitespace."""
    return json.dumps(schema_to_dict(schema), sort_keys=True, separators=(",", ":"))


def schema_fingerprint(schema: GraphSchema) -> int:
    return fnv1a64(serialize_schema(schema).encode("utf-8"))


def read_schema(path) -> GraphSchema:
    with open(path, encoding="utf-8") as f:
        return parse_schema(f.read())


# Conformance --------------------------------------------------------------

def _dtype_ok(spec: FeatureSpec, array: np.ndarray) -> bool:
    kind = array.dtype.kind
    if spec.dtype == "string":
        return kind in "OUS"
    if spec.dtype == "int64":
        return kind in "iu"
    return kind == "f"


def _check_feature(where: str, spec: FeatureSpec, value, expected_len: int, out: list):
    if isinstance(value, Var):
        value = value.value
    if spec.is_ragged:
        if not isinstance(value, RaggedFeature):
            out.append(f"ragged feature {where} must be stored ragged")
            return
        data, item_shape = value.flat, tuple(spec.shape[1:])
        got_shape = value.inner_shape
        length = len(value)
    else:
        if isinstance(value, RaggedFeature):
            out.append(f"feature {where} is ragged but the schema shape is {list(spec.shape)}")
            return
        data = np.asarray(value)
        if data.ndim == 0:
            out.append(f"feature {where} has no item dimension")
            return
        item_shape, got_shape, length = tuple(spec.shape), data.shape[1:], data.shape[0]
    if not _dtype_ok(spec, data):
        out.append(f"dtype mismatch {where}: schema {spec.dtype}, got {data.dtype}")
    if tuple(got_shape) != item_shape:
        out.append(f"shape mismatch {where}: schema {list(item_shape)}, got {list(got_shape)}")
    if length != expected_len:
        out.append(f"size mismatch {where}: {length} items, expected {expected_len}")


def _check_features(where: str, specs: Mapping[str, FeatureSpec], features: Mapping,
                    expected_len: int, out: list, allow_extra: Optional[set]):
    for name, spec in specs.items():
        if name not in features:
            out.append(f"missing feature {where}.{name}")
        else:
            _check_feature(f"{where}.{name}", spec, features[name], expected_len, out)
    for name in features:
        if name not in specs and name not in (allow_extra or set()):
            out.append(f"unknown feature {where}.{name}")


def validate_graph(schema: GraphSchema, graph: GraphTensor,
                   allow_extra_features: Optional[set] = None) -> list[str]:
    """Lists every way `graph` departs from `schema`; an empty list means it conforms."""
    out: list[str] = []
    _check_features("context", schema.context, graph.context.features, graph.num_components, out,
                    allow_extra_features)
    for name in graph.node_sets:
        if name not in schema.node_sets:
            out.append(f"unknown node set {name}")
    for name in graph.edge_sets:
        if name not in schema.edge_sets:
            out.append(f"unknown edge set {name}")
    for name, spec in schema.node_sets.items():
        ns = graph.node_sets.get(name)
        if ns is None:
            out.append(f"missing node set {name}")
            continue
        _check_features(name, spec.features, ns.features, ns.total_size, out, allow_extra_features)
    for name, spec in schema.edge_sets.items():
        es = graph.edge_sets.get(name)
        if es is None:
            out.append(f"missing edge set {name}")
            continue
        adj = es.adjacency
        if (adj.source_set, adj.target_set) != (spec.source, spec.target):
            out.append(f"endpoint mismatch {name}: schema {spec.source}->{spec.target}, "
                       f"got {adj.source_set}->{adj.target_set}")
        for tag, set_name, idx in (("source", adj.source_set, adj.source), ("target", adj.target_set, adj.target)):
            if set_name not in graph.node_sets:
                continue
            n = graph.node_sets[set_name].total_size
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                out.append(f"index out of range {name}.{tag}: max {int(idx.max())} for {n} nodes")
            if idx.size != es.total_size:
                out.append(f"size mismatch {name}.{tag}: {idx.size} indices for {es.total_size} edges")
        _check_features(name, spec.features, es.features, es.total_size, out, allow_extra_features)
    return out
