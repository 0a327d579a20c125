"""Immutable heterogeneous graph container.

A GraphTensor holds named node sets and edge sets plus per-component context
features. Every feature of a set is indexed by the set's flat item index
0..total-1, and the per-component `sizes` say which items belong to which
component. Batches are formed by merging graphs into components of one graph.
"""

from __future__ import annotations

import dataclasses
from types import MappingProxyType
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from hetgnn.core.tape import Var

HIDDEN_STATE = "hidden_state"
SOURCE = "source"
TARGET = "target"
CONTEXT = "context"


class GraphTensorError(ValueError):
    pass


class FitError(GraphTensorError):
    """The graph does not fit into the requested padded sizes."""


def _frozen(array: np.ndarray) -> np.ndarray:
    view = array.view()
    view.flags.writeable = False
    return view


@dataclasses.dataclass(frozen=True, eq=False)
class RaggedFeature:
    """Variable-length rows stored as row lengths plus flat values."""

    row_lengths: np.ndarray
    flat: np.ndarray

    def __post_init__(self):
        lengths = np.asarray(self.row_lengths, dtype=np.int64)
        flat = np.asarray(self.flat)
        if lengths.ndim != 1 or (lengths.size and lengths.min() < 0):
            raise GraphTensorError("row_lengths must be a rank-1 array of non-negative counts")
        if flat.ndim < 1 or flat.shape[0] != int(lengths.sum()):
            raise GraphTensorError(
                f"ragged flat values have {flat.shape[0] if flat.ndim else 0} rows, "
                f"row_lengths sum to {int(lengths.sum())}")
        object.__setattr__(self, "row_lengths", _frozen(lengths))
        object.__setattr__(self, "flat", _frozen(flat))

    @classmethod
    def from_rows(cls, rows: Sequence, dtype=None, inner_shape=()) -> "RaggedFeature":
        lengths = np.array([len(r) for r in rows], dtype=np.int64)
        items = [x for r in rows for x in r]
        if dtype is None:
            dtype = _infer_dtype(items) if items else np.float32
        if dtype == object:
            flat = np.empty(len(items), dtype=object)
            flat[:] = items
        else:
            flat = np.asarray(items, dtype=dtype).reshape((len(items),) + tuple(inner_shape))
        return cls(lengths, flat)

    @property
    def inner_shape(self) -> tuple:
        return tuple(self.flat.shape[1:])

    @property
    def shape(self) -> tuple:
        return (len(self.row_lengths), None) + self.inner_shape

    @property
    def dtype(self):
        return self.flat.dtype

    def __len__(self):
        return len(self.row_lengths)

    @property
    def row_starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.row_lengths)[:-1]]).astype(np.int64) \
            if len(self.row_lengths) else np.zeros(0, dtype=np.int64)

    def rows(self) -> list:
        starts = self.row_starts
        return [self.flat[s:s + n] for s, n in zip(starts, self.row_lengths)]

    def take(self, indices) -> "RaggedFeature":
        indices = np.asarray(indices, dtype=np.int64)
        starts = self.row_starts
        lengths = self.row_lengths[indices]
        if lengths.sum():
            flat_idx = np.concatenate([np.arange(starts[i], starts[i] + n)
                                       for i, n in zip(indices, lengths)])
        else:
            flat_idx = np.zeros(0, dtype=np.int64)
        return RaggedFeature(lengths, self.flat[flat_idx])

    def row_means(self, dtype=np.float32) -> np.ndarray:
        """Mean of each row; empty rows give zeros."""
        n = len(self.row_lengths)
        ids = np.repeat(np.arange(n), self.row_lengths)
        total = np.zeros((n,) + self.inner_shape, dtype=np.float64)
        np.add.at(total, ids, self.flat.astype(np.float64))
        counts = np.maximum(self.row_lengths, 1).reshape((n,) + (1,) * len(self.inner_shape))
        return (total / counts).astype(dtype)

    def first(self, k: int = 1) -> "RaggedFeature":
        """The first `k` elements of each row (fewer for short rows)."""
        starts = self.row_starts
        lengths = np.minimum(self.row_lengths, k)
        idx = [np.arange(s, s + n) for s, n in zip(starts, lengths)]
        flat_idx = np.concatenate(idx) if idx else np.zeros(0, dtype=np.int64)
        return RaggedFeature(lengths, self.flat[flat_idx.astype(np.int64)])

    def equals(self, other) -> bool:
        return (isinstance(other, RaggedFeature)
                and _array_equal(self.row_lengths, other.row_lengths)
                and _array_equal(self.flat, other.flat))

    @staticmethod
    def concat(parts: Sequence["RaggedFeature"]) -> "RaggedFeature":
        return RaggedFeature(np.concatenate([p.row_lengths for p in parts]),
                             np.concatenate([p.flat for p in parts]))


Feature = Union[np.ndarray, RaggedFeature, Var]


def _infer_dtype(items):
    if all(isinstance(x, str) for x in items):
        return object
    arr = np.asarray(items)
    if arr.dtype.kind in "iub":
        return np.int64
    return np.float32


def as_feature(value) -> Feature:
    """Coerces lists to arrays: ints to int64, floats to float32, strings to object."""
    if isinstance(value, (RaggedFeature, Var)):
        return value
    if isinstance(value, np.ndarray):
        return _frozen(value)
    flat = list(np.asarray(value, dtype=object).reshape(-1)) if np.ndim(value) else [value]
    if flat and all(isinstance(x, str) for x in flat):
        arr = np.empty(np.shape(value), dtype=object)
        arr[...] = value
        return _frozen(arr)
    arr = np.asarray(value)
    if arr.dtype.kind in "iub":
        arr = arr.astype(np.int64)
    elif arr.dtype.kind == "f":
        arr = arr.astype(np.float32)
    return _frozen(arr)


def feature_length(value) -> int:
    if isinstance(value, RaggedFeature):
        return len(value)
    array = value.value if isinstance(value, Var) else np.asarray(value)
    if array.ndim == 0:
        raise GraphTensorError("features need a leading item dimension")
    return int(array.shape[0])


def _freeze_features(features: Optional[Mapping]) -> Mapping:
    return MappingProxyType({str(k): as_feature(v) for k, v in (features or {}).items()})


@dataclasses.dataclass(frozen=True, eq=False)
class Adjacency:
    source_set: str
    source: np.ndarray
    target_set: str
    target: np.ndarray

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.int64).reshape(-1)
        tgt = np.asarray(self.target, dtype=np.int64).reshape(-1)
        if src.shape != tgt.shape:
            raise GraphTensorError(f"adjacency source has {src.size} entries, target {tgt.size}")
        object.__setattr__(self, "source", _frozen(src))
        object.__setattr__(self, "target", _frozen(tgt))

    @classmethod
    def from_indices(cls, source: tuple, target: tuple) -> "Adjacency":
        return cls(source[0], np.asarray(source[1]), target[0], np.asarray(target[1]))

    def node_set_name(self, tag: str) -> str:
        if tag == SOURCE:
            return self.source_set
        if tag == TARGET:
            return self.target_set
        raise GraphTensorError(f"adjacency has no endpoint {tag!r}")

    def indices(self, tag: str) -> np.ndarray:
        if tag == SOURCE:
            return self.source
        if tag == TARGET:
            return self.target
        raise GraphTensorError(f"adjacency has no endpoint {tag!r}")


@dataclasses.dataclass(frozen=True, eq=False)
class NodeSet:
    sizes: np.ndarray
    features: Mapping[str, Feature]

    @classmethod
    def from_fields(cls, sizes, features=None) -> "NodeSet":
        return cls(_frozen(np.asarray(sizes, dtype=np.int64).reshape(-1)), _freeze_features(features))

    @property
    def total_size(self) -> int:
        return int(self.sizes.sum())

    def __getitem__(self, name):
        return self.features[name]

    def __contains__(self, name):
        return name in self.features


@dataclasses.dataclass(frozen=True, eq=False)
class EdgeSet:
    sizes: np.ndarray
    adjacency: Adjacency
    features: Mapping[str, Feature]

    @classmethod
    def from_fields(cls, sizes, adjacency: Adjacency, features=None) -> "EdgeSet":
        return cls(_frozen(np.asarray(sizes, dtype=np.int64).reshape(-1)), adjacency,
                   _freeze_features(features))

    @property
    def total_size(self) -> int:
        return int(self.sizes.sum())

    def __getitem__(self, name):
        return self.features[name]

    def __contains__(self, name):
        return name in self.features


@dataclasses.dataclass(frozen=True, eq=False)
class Context:
    features: Mapping[str, Feature]

    @classmethod
    def from_fields(cls, features=None) -> "Context":
        return cls(_freeze_features(features))

    def __getitem__(self, name):
        return self.features[name]

    def __contains__(self, name):
        return name in self.features


@dataclasses.dataclass(frozen=True, eq=False)
class GraphTensor:
    context: Context
    node_sets: Mapping[str, NodeSet]
    edge_sets: Mapping[str, EdgeSet]
    num_components: int

    def piece(self, set_name: str):
        if set_name in self.node_sets:
            return self.node_sets[set_name]
        if set_name in self.edge_sets:
            return self.edge_sets[set_name]
        raise GraphTensorError(f"no node set or edge set named {set_name!r}")

    def component_ids(self, set_name: str) -> np.ndarray:
        """Component index of every item of a node set or edge set."""
        sizes = self.piece(set_name).sizes
        return np.repeat(np.arange(self.num_components, dtype=np.int64), sizes)

    def component_offsets(self, set_name: str) -> np.ndarray:
        sizes = self.piece(set_name).sizes
        return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)

    def equals(self, other: "GraphTensor") -> bool:
        """Bitwise equality of structure and every feature."""
        if self.num_components != other.num_components:
            return False
        if not _features_equal(self.context.features, other.context.features):
            return False
        if set(self.node_sets) != set(other.node_sets) or set(self.edge_sets) != set(other.edge_sets):
            return False
        for name, ns in self.node_sets.items():
            o = other.node_sets[name]
            if not _array_equal(ns.sizes, o.sizes) or not _features_equal(ns.features, o.features):
                return False
        for name, es in self.edge_sets.items():
            o = other.edge_sets[name]
            a, b = es.adjacency, o.adjacency
            if (a.source_set, a.target_set) != (b.source_set, b.target_set):
                return False
            if not (_array_equal(a.source, b.source) and _array_equal(a.target, b.target)):
                return False
            if not _array_equal(es.sizes, o.sizes) or not _features_equal(es.features, o.features):
                return False
        return True

    def __repr__(self):
        nodes = ", ".join(f"{k}:{v.total_size}" for k, v in self.node_sets.items())
        edges = ", ".join(f"{k}:{v.total_size}" for k, v in self.edge_sets.items())
        return f"GraphTensor(components={self.num_components}, nodes[{nodes}], edges[{edges}])"


def _array_equal(a, b) -> bool:
    if isinstance(a, Var) or isinstance(b, Var):
        a = a.value if isinstance(a, Var) else a
        b = b.value if isinstance(b, Var) else b
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.dtype != b.dtype:
        return False
    if a.dtype.kind == "f":
        return a.tobytes() == b.tobytes()
    return bool(np.array_equal(a, b))


def _features_equal(a: Mapping, b: Mapping) -> bool:
    if set(a) != set(b):
        return False
    for name in a:
        x, y = a[name], b[name]
        if isinstance(x, RaggedFeature) or isinstance(y, RaggedFeature):
            if not (isinstance(x, RaggedFeature) and x.equals(y)):
                return False
        elif not _array_equal(x, y):
            return False
    return True


# Construction -------------------------------------------------------------

def _check_structure(context: Context, node_sets: Mapping[str, NodeSet],
                     edge_sets: Mapping[str, EdgeSet]) -> int:
    counts = {len(ns.sizes) for ns in node_sets.values()} | {len(es.sizes) for es in edge_sets.values()}
    if not counts:
        num_components = 1
        for value in context.features.values():
            num_components = feature_length(value)
            break
    elif len(counts) != 1:
        raise GraphTensorError(f"node/edge sets disagree on the number of components: {sorted(counts)}")
    else:
        num_components = counts.pop()
    if num_components < 1:
        raise GraphTensorError("a graph needs at least one component")

    for name, value in context.features.items():
        if feature_length(value) != num_components:
            raise GraphTensorError(
                f"context feature {name!r} has leading dim {feature_length(value)}, "
                f"expected {num_components} (one row per component)")
    for kind, pieces in (("node set", node_sets), ("edge set", edge_sets)):
        for set_name, piece in pieces.items():
            if piece.sizes.size and piece.sizes.min() < 0:
                raise GraphTensorError(f"{kind} {set_name!r} has negative sizes")
            total = piece.total_size
            for fname, value in piece.features.items():
                if feature_length(value) != total:
                    raise GraphTensorError(
                        f"feature {set_name}.{fname} has leading dim {feature_length(value)}, "
                        f"expected {total} (size mismatch)")

    for set_name, es in edge_sets.items():
        adj = es.adjacency
        for tag in (SOURCE, TARGET):
            ns_name = adj.node_set_name(tag)
            if ns_name not in node_sets:
                raise GraphTensorError(f"edge set {set_name!r} references unknown node set {ns_name!r}")
            idx = adj.indices(tag)
            if idx.size != es.total_size:
                raise GraphTensorError(
                    f"edge set {set_name!r} has {idx.size} {tag} indices for {es.total_size} edges")
            n = node_sets[ns_name].total_size
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                bad = idx[(idx < 0) | (idx >= n)][0]
                raise GraphTensorError(
                    f"edge set {set_name!r}: {tag} index {bad} out of range for node set "
                    f"{ns_name!r} of size {n}")
        if num_components > 1 and es.total_size:
            edge_comp = np.repeat(np.arange(num_components), es.sizes)
            for tag in (SOURCE, TARGET):
                node_comp = np.repeat(np.arange(num_components), node_sets[adj.node_set_name(tag)].sizes)
                if np.any(node_comp[adj.indices(tag)] != edge_comp):
                    raise GraphTensorError(f"edge set {set_name!r} has an edge crossing a component boundary")
    return num_components


def build_graph_tensor(context: Optional[Context] = None,
                       node_sets: Optional[Mapping[str, NodeSet]] = None,
                       edge_sets: Optional[Mapping[str, EdgeSet]] = None) -> GraphTensor:
    """Assembles and checks a GraphTensor from its pieces."""
    context = context if context is not None else Context.from_fields({})
    node_sets = MappingProxyType(dict(node_sets or {}))
    edge_sets = MappingProxyType(dict(edge_sets or {}))
    num_components = _check_structure(context, node_sets, edge_sets)
    return GraphTensor(context, node_sets, edge_sets, num_components)


# Transformations ----------------------------------------------------------

def _concat_feature(parts):
    if isinstance(parts[0], RaggedFeature):
        return RaggedFeature.concat(parts)
    return np.concatenate([np.asarray(p) for p in parts], axis=0)


def _feature_signature(value):
    if isinstance(value, RaggedFeature):
        return ("ragged", value.flat.dtype.str, value.inner_shape)
    value = np.asarray(value)
    return ("dense", value.dtype.str, value.shape[1:])


def _check_compatible(graphs: Sequence[GraphTensor]):
    first = graphs[0]

    def sig(g):
        return (
            {k: _feature_signature(v) for k, v in g.context.features.items()},
            {k: {f: _feature_signature(v) for f, v in ns.features.items()} for k, ns in g.node_sets.items()},
            {k: ((es.adjacency.source_set, es.adjacency.target_set),
                 {f: _feature_signature(v) for f, v in es.features.items()}) for k, es in g.edge_sets.items()},
        )

    ref = sig(first)
    for i, g in enumerate(graphs[1:], start=1):
        if sig(g) != ref:
            raise GraphTensorError(f"graph {i} is incompatible with graph 0 (sets, features, dtypes or shapes differ)")


def merge_batch(graphs: Sequence[GraphTensor]) -> GraphTensor:
    """Concatenates graphs as consecutive components of one graph."""
    if not graphs:
        raise GraphTensorError("merge_batch needs at least one graph")
    _check_compatible(graphs)
    first = graphs[0]
    context = Context.from_fields({name: _concat_feature([g.context.features[name] for g in graphs])
                                   for name in first.context.features})
    node_sets = {}
    for name in first.node_sets:
        pieces = [g.node_sets[name] for g in graphs]
        node_sets[name] = NodeSet.from_fields(
            np.concatenate([p.sizes for p in pieces]),
            {f: _concat_feature([p.features[f] for p in pieces]) for f in pieces[0].features})
    edge_sets = {}
    for name, es in first.edge_sets.items():
        src_set, tgt_set = es.adjacency.source_set, es.adjacency.target_set
        src, tgt = [], []
        src_off = tgt_off = 0
        for g in graphs:
            adj = g.edge_sets[name].adjacency
            src.append(adj.source + src_off)
            tgt.append(adj.target + tgt_off)
            src_off += g.node_sets[src_set].total_size
            tgt_off += g.node_sets[tgt_set].total_size
        pieces = [g.edge_sets[name] for g in graphs]
        edge_sets[name] = EdgeSet.from_fields(
            np.concatenate([p.sizes for p in pieces]),
            Adjacency(src_set, np.concatenate(src), tgt_set, np.concatenate(tgt)),
            {f: _concat_feature([p.features[f] for p in pieces]) for f in pieces[0].features})
    return build_graph_tensor(context, node_sets, edge_sets)


def replace_features(graph: GraphTensor, context: Optional[Mapping] = None,
                     node_sets: Optional[Mapping[str, Mapping]] = None,
                     edge_sets: Optional[Mapping[str, Mapping]] = None,
                     remove: Optional[Mapping[str, Sequence[str]]] = None) -> GraphTensor:
    """New graph with the named features replaced or added; structure is shared.

    `remove` maps a set name (or "context") to feature names to drop.
    """
    remove = remove or {}

    def updated(features, overrides, key, expected):
        merged = {k: v for k, v in features.items() if k not in set(remove.get(key, ()))}
        for name, value in (overrides or {}).items():
            value = as_feature(value)
            if feature_length(value) != expected:
                raise GraphTensorError(
                    f"override {key}.{name} has leading dim {feature_length(value)}, expected {expected}")
            merged[name] = value
        return merged

    for key in list(node_sets or {}) + list(edge_sets or {}):
        graph.piece(key)
    new_context = Context.from_fields(updated(graph.context.features, context, CONTEXT, graph.num_components))
    new_nodes = {
        name: NodeSet(ns.sizes, _freeze_features(updated(ns.features, (node_sets or {}).get(name), name,
                                                         ns.total_size)))
        for name, ns in graph.node_sets.items()}
    new_edges = {
        name: EdgeSet(es.sizes, es.adjacency,
                      _freeze_features(updated(es.features, (edge_sets or {}).get(name), name, es.total_size)))
        for name, es in graph.edge_sets.items()}
    return GraphTensor(new_context, MappingProxyType(new_nodes), MappingProxyType(new_edges),
                       graph.num_components)


def get_component(graph: GraphTensor, index: int) -> GraphTensor:
    """Extracts one component as a standalone single-component graph."""
    if not 0 <= index < graph.num_components:
        raise GraphTensorError(f"component {index} out of range [0, {graph.num_components})")

    def take(value, start, stop):
        if isinstance(value, RaggedFeature):
            return value.take(np.arange(start, stop))
        return np.asarray(value)[start:stop]

    node_start = {}
    node_sets = {}
    for name, ns in graph.node_sets.items():
        start = int(ns.sizes[:index].sum())
        stop = start + int(ns.sizes[index])
        node_start[name] = start
        node_sets[name] = NodeSet.from_fields([stop - start], {f: take(v, start, stop) for f, v in ns.features.items()})
    edge_sets = {}
    for name, es in graph.edge_sets.items():
        start = int(es.sizes[:index].sum())
        stop = start + int(es.sizes[index])
        adj = es.adjacency
        edge_sets[name] = EdgeSet.from_fields(
            [stop - start],
            Adjacency(adj.source_set, adj.source[start:stop] - node_start[adj.source_set],
                      adj.target_set, adj.target[start:stop] - node_start[adj.target_set]),
            {f: take(v, start, stop) for f, v in es.features.items()})
    context = Context.from_fields({f: take(v, index, index + 1) for f, v in graph.context.features.items()})
    return build_graph_tensor(context, node_sets, edge_sets)


@dataclasses.dataclass(frozen=True)
class SizeTargets:
    """Total sizes a padded graph must have."""

    num_components: int
    node_sets: Mapping[str, int]
    edge_sets: Mapping[str, int] = dataclasses.field(default_factory=dict)


def _fill(value, count: int):
    if isinstance(value, RaggedFeature):
        return RaggedFeature(np.zeros(count, dtype=np.int64), np.zeros((0,) + value.inner_shape, value.flat.dtype))
    value = np.asarray(value)
    if value.dtype == object:
        out = np.empty((count,) + value.shape[1:], dtype=object)
        out[...] = ""
        return out
    return np.zeros((count,) + value.shape[1:], dtype=value.dtype)


def pad_to_total_sizes(graph: GraphTensor, targets: SizeTargets) -> tuple[GraphTensor, np.ndarray]:
    """Appends padding components so set totals match `targets` exactly.

    All padding items go into the first padding component; padding edges
    connect padding nodes only. Returns the padded graph and a component
    mask that is True for real components.
    """
    c = graph.num_components
    node_pad = {name: int(targets.node_sets.get(name, ns.total_size)) - ns.total_size
                for name, ns in graph.node_sets.items()}
    edge_pad = {name: int(targets.edge_sets.get(name, es.total_size)) - es.total_size
                for name, es in graph.edge_sets.items()}
    extra_components = targets.num_components - c
    too_big = [n for n, p in {**node_pad, **edge_pad}.items() if p < 0]
    if too_big or extra_components < 0:
        raise FitError(f"graph does not fit padding targets (oversized: {too_big or 'components'})")
    needs_items = any(p > 0 for p in node_pad.values()) or any(p > 0 for p in edge_pad.values())
    if needs_items and extra_components < 1:
        raise FitError("padding items require at least one extra component")
    for name, p in edge_pad.items():
        if p > 0:
            adj = graph.edge_sets[name].adjacency
            for endpoint in (adj.source_set, adj.target_set):
                if node_pad[endpoint] < 1:
                    raise FitError(f"padding edges of {name!r} need a padding node in {endpoint!r}")

    def sizes_with(sizes, pad):
        extra = np.zeros(extra_components, dtype=np.int64)
        if extra_components:
            extra[0] = pad
        return np.concatenate([sizes, extra])

    node_sets = {}
    for name, ns in graph.node_sets.items():
        p = node_pad[name]
        node_sets[name] = NodeSet.from_fields(
            sizes_with(ns.sizes, p),
            {f: _concat_feature([v, _fill(v, p)]) for f, v in ns.features.items()})
    edge_sets = {}
    for name, es in graph.edge_sets.items():
        p = edge_pad[name]
        adj = es.adjacency
        src_pad = np.full(p, graph.node_sets[adj.source_set].total_size, dtype=np.int64)
        tgt_pad = np.full(p, graph.node_sets[adj.target_set].total_size, dtype=np.int64)
        edge_sets[name] = EdgeSet.from_fields(
            sizes_with(es.sizes, p),
            Adjacency(adj.source_set, np.concatenate([adj.source, src_pad]),
                      adj.target_set, np.concatenate([adj.target, tgt_pad])),
            {f: _concat_feature([v, _fill(v, p)]) for f, v in es.features.items()})
    context = Context.from_fields({f: _concat_feature([v, _fill(v, extra_components)])
                                   for f, v in graph.context.features.items()})
    mask = np.concatenate([np.ones(c, dtype=bool), np.zeros(extra_components, dtype=bool)])
    return build_graph_tensor(context, node_sets, edge_sets), mask
