"""Broadcast and pool between node sets, edge sets and the graph context.

All ops take values either by feature name (looked up in the graph) or as
an explicit tensor that only needs the right leading dimension. They work on
plain arrays and on tape-recorded values alike.
"""

from typing import Optional

import numpy as np

from hetgnn.core import ops
from hetgnn.core.tape import value_of
from hetgnn.graph_tensor import CONTEXT, SOURCE, TARGET, GraphTensor, GraphTensorError, RaggedFeature

ENDPOINT_TAGS = (SOURCE, TARGET, CONTEXT)


def _resolve(graph: GraphTensor, set_name: str, feature_name: Optional[str], feature_value):
    if (feature_name is None) == (feature_value is None):
        raise ValueError("pass exactly one of feature_name or feature_value")
    if feature_value is not None:
        return feature_value
    if set_name == CONTEXT:
        features = graph.context.features
    else:
        features = graph.piece(set_name).features
    if feature_name not in features:
        raise GraphTensorError(f"{set_name} has no feature {feature_name!r}")
    value = features[feature_name]
    if isinstance(value, RaggedFeature):
        raise GraphTensorError(f"{set_name}.{feature_name} is ragged; reduce it to a dense tensor first")
    return value


def _check_rows(value, expected: int, what: str):
    got = value_of(value).shape[0] if value_of(value).ndim else 0
    if got != expected:
        raise ops.DimensionError(f"{what}: leading dim {got}, expected {expected}")


def _edge_set(graph, edge_set_name):
    if edge_set_name not in graph.edge_sets:
        raise GraphTensorError(f"unknown edge set {edge_set_name!r}")
    return graph.edge_sets[edge_set_name]


def _as_2d(value):
    """Promotes [n] to [n, 1] so row kernels apply."""
    if value_of(value).ndim == 1:
        return ops.reshape(value, (-1, 1)), True
    return value, False


def _restore(value, squeezed):
    return ops.reshape(value, (-1,)) if squeezed else value


def broadcast_node_to_edges(graph: GraphTensor, edge_set_name: str, node_tag: str, *,
                            feature_name: Optional[str] = None, feature_value=None):
    """out[e] = value[endpoint(e)] for the SOURCE or TARGET endpoint."""
    es = _edge_set(graph, edge_set_name)
    node_set = es.adjacency.node_set_name(node_tag)
    value = _resolve(graph, node_set, feature_name, feature_value)
    _check_rows(value, graph.node_sets[node_set].total_size, f"values for node set {node_set!r}")
    value, squeezed = _as_2d(value)
    return _restore(ops.gather_rows(value, es.adjacency.indices(node_tag)), squeezed)


def pool_edges_to_node(graph: GraphTensor, edge_set_name: str, node_tag: str, reduce_type: str = "sum", *,
                       feature_name: Optional[str] = None, feature_value=None):
    """Aggregates edge values at the tagged endpoint; nodes without edges get 0."""
    es = _edge_set(graph, edge_set_name)
    node_set = es.adjacency.node_set_name(node_tag)
    value = _resolve(graph, edge_set_name, feature_name, feature_value)
    _check_rows(value, es.total_size, f"values for edge set {edge_set_name!r}")
    value, squeezed = _as_2d(value)
    out = ops.segment_reduce(value, es.adjacency.indices(node_tag),
                             graph.node_sets[node_set].total_size, reduce_type)
    return _restore(out, squeezed)


def broadcast_context_to_nodes(graph: GraphTensor, node_set_name: str, *,
                               feature_name: Optional[str] = None, feature_value=None):
    return _broadcast_context(graph, node_set_name, feature_name, feature_value)


def broadcast_context_to_edges(graph: GraphTensor, edge_set_name: str, *,
                               feature_name: Optional[str] = None, feature_value=None):
    return _broadcast_context(graph, edge_set_name, feature_name, feature_value)


def pool_nodes_to_context(graph: GraphTensor, node_set_name: str, reduce_type: str = "sum", *,
                          feature_name: Optional[str] = None, feature_value=None):
    return _pool_to_context(graph, node_set_name, reduce_type, feature_name, feature_value)


def pool_edges_to_context(graph: GraphTensor, edge_set_name: str, reduce_type: str = "sum", *,
                          feature_name: Optional[str] = None, feature_value=None):
    return _pool_to_context(graph, edge_set_name, reduce_type, feature_name, feature_value)


def _broadcast_context(graph, set_name, feature_name, feature_value):
    value = _resolve(graph, CONTEXT, feature_name, feature_value)
    _check_rows(value, graph.num_components, "context values")
    value, squeezed = _as_2d(value)
    return _restore(ops.gather_rows(value, graph.component_ids(set_name)), squeezed)


def _pool_to_context(graph, set_name, reduce_type, feature_name, feature_value):
    value = _resolve(graph, set_name, feature_name, feature_value)
    _check_rows(value, graph.piece(set_name).total_size, f"values for {set_name!r}")
    value, squeezed = _as_2d(value)
    out = ops.segment_reduce(value, graph.component_ids(set_name), graph.num_components, reduce_type)
    return _restore(out, squeezed)


def context_exchange(graph: GraphTensor, set_name: str, direction: str, reduce_type: str = "sum", *,
                     feature_name: Optional[str] = None, feature_value=None):
    """Moves values between the context and the items of a node or edge set."""
    if direction == "broadcast":
        return _broadcast_context(graph, set_name, feature_name, feature_value)
    if direction == "pool":
        return _pool_to_context(graph, set_name, reduce_type, feature_name, feature_value)
    raise ValueError(f"direction must be 'broadcast' or 'pool', got {direction!r}")


def receiver_ids(graph: GraphTensor, receiver_tag: str, *, edge_set_name: Optional[str] = None,
                 node_set_name: Optional[str] = None) -> tuple[np.ndarray, int]:
    """Segment ids and segment count that key senders by their receiver.

    With SOURCE/TARGET the senders are edges of `edge_set_name`; with CONTEXT
    they are the items (edges or nodes) of the named set, keyed by component.
    """
    if receiver_tag in (SOURCE, TARGET):
        if edge_set_name is None:
            raise ValueError(f"receiver_tag {receiver_tag!r} needs an edge set")
        es = _edge_set(graph, edge_set_name)
        receiver_set = es.adjacency.node_set_name(receiver_tag)
        return es.adjacency.indices(receiver_tag), graph.node_sets[receiver_set].total_size
    if receiver_tag == CONTEXT:
        set_name = edge_set_name if edge_set_name is not None else node_set_name
        if set_name is None:
            raise ValueError("CONTEXT receiver needs an edge set or node set")
        return graph.component_ids(set_name), graph.num_components
    raise ValueError(f"unknown receiver tag {receiver_tag!r}")


def edge_softmax(graph: GraphTensor, edge_set_name: Optional[str], receiver_tag: str, logits, *,
                 node_set_name: Optional[str] = None):
    """Softmax of sender logits, normalized over the senders of each receiver."""
    ids, n = receiver_ids(graph, receiver_tag, edge_set_name=edge_set_name, node_set_name=node_set_name)
    _check_rows(logits, ids.shape[0], "logits")
    logits, squeezed = _as_2d(logits)
    return _restore(ops.segment_softmax(logits, ids, n), squeezed)


softmax = edge_softmax
