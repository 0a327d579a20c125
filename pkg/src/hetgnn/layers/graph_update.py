"""GraphUpdate: one simultaneous round of edge, node and context updates.

Order within a round: edge-set updates read the input graph; node-set
updates all read the graph with updated edge states but pre-update node
states; the context update reads the updated node states.
"""

from typing import Mapping, Optional, Sequence

import numpy as np

from hetgnn import exchange_ops as xo
from hetgnn.core import ops
from hetgnn.core.tape import Tape, value_of
from hetgnn.graph_tensor import CONTEXT, HIDDEN_STATE, SOURCE, TARGET, GraphTensor, replace_features
from hetgnn.layers.base import Dense, LayerError, get_state


class NodeSetUpdate:
    def __init__(self, convs: Mapping[str, object], next_state, context_input: bool = False):
        self.convs = dict(convs)
        self.next_state = next_state
        self.context_input = context_input

    def __call__(self, tape: Tape, graph: GraphTensor, node_set: str):
        pooled = {}
        for edge_set, conv in self.convs.items():
            receiver = conv.receiver_set(graph, edge_set)
            if receiver != node_set:
                raise LayerError(f"receiver mismatch: conv on {edge_set!r} with receiver_tag "
                                 f"{conv.receiver_tag!r} feeds {receiver!r}, not {node_set!r}")
            pooled[edge_set] = conv(tape, graph, edge_set)
        context = None
        if self.context_input:
            context = xo.broadcast_context_to_nodes(graph, node_set, feature_value=get_state(graph, CONTEXT))
        return self.next_state(tape, get_state(graph, node_set), pooled, context)


class EdgeSetUpdate:
    def __init__(self, next_edge_state):
        self.next_edge_state = next_edge_state

    def __call__(self, tape: Tape, graph: GraphTensor, edge_set: str):
        es = graph.edge_sets[edge_set]
        adj = es.adjacency
        source = xo.broadcast_node_to_edges(graph, edge_set, SOURCE,
                                            feature_value=get_state(graph, adj.source_set))
        target = xo.broadcast_node_to_edges(graph, edge_set, TARGET,
                                            feature_value=get_state(graph, adj.target_set))
        prev = es.features.get(HIDDEN_STATE)
        return self.next_edge_state(tape, prev, source, target)


class ContextUpdate:
    """New context state = act(W [prev context state, pooled node states] + b)."""

    def __init__(self, name: str, units: int, node_sets: Sequence[str], reduce_type: str = "mean",
                 activation: str = "relu"):
        self.name = name
        self.node_sets = list(node_sets)
        self.reduce_type = reduce_type
        self.dense = Dense(f"{name}/dense", units, activation)

    def __call__(self, tape: Tape, graph: GraphTensor):
        parts = []
        if HIDDEN_STATE in graph.context.features:
            parts.append(get_state(graph, CONTEXT))
        for node_set in self.node_sets:
            parts.append(xo.pool_nodes_to_context(graph, node_set, self.reduce_type,
                                                  feature_value=get_state(graph, node_set)))
        if not parts:
            raise LayerError("context update has no inputs")
        return self.dense(tape, ops.concat_last(parts) if len(parts) > 1 else parts[0])


class GraphUpdate:
    def __init__(self, node_sets: Optional[Mapping[str, NodeSetUpdate]] = None,
                 edge_sets: Optional[Mapping[str, EdgeSetUpdate]] = None,
                 context: Optional[ContextUpdate] = None):
        self.node_sets = dict(node_sets or {})
        self.edge_sets = dict(edge_sets or {})
        self.context = context

    def __call__(self, graph: GraphTensor, tape: Tape) -> GraphTensor:
        if self.edge_sets:
            edge_states = {name: {HIDDEN_STATE: update(tape, graph, name)}
                           for name, update in self.edge_sets.items()}
            graph = replace_features(graph, edge_sets=edge_states)
        if self.node_sets:
            node_states = {name: {HIDDEN_STATE: update(tape, graph, name)}
                           for name, update in self.node_sets.items()}
            graph = replace_features(graph, node_sets=node_states)
        if self.context is not None:
            graph = replace_features(graph, context={HIDDEN_STATE: self.context(tape, graph)})
        return graph


def readout_root(graph: GraphTensor, node_set: str, feature: str = HIDDEN_STATE,
                 component_mask: Optional[np.ndarray] = None):
    """State of local node 0 of `node_set` in every component, shape [num_components, d].

    Components masked out may lack nodes; their rows are zeros.
    """
    sizes = graph.node_sets[node_set].sizes
    state = get_state(graph, node_set, feature)
    mask = np.ones(graph.num_components, dtype=bool) if component_mask is None else np.asarray(component_mask)
    empty = sizes == 0
    if np.any(empty & mask):
        bad = int(np.nonzero(empty & mask)[0][0])
        raise LayerError(f"node set {node_set!r} is empty in component {bad}")
    offsets = graph.component_offsets(node_set)
    if not np.any(empty):
        return ops.gather_rows(state, offsets)
    rows = ops.gather_rows(state, np.where(empty, 0, offsets))
    keep = (~empty).astype(value_of(state).dtype).reshape(-1, 1)
    return ops.mul(rows, keep)


def l2_penalty(tape: Tape, coefficient: float):
    """coefficient * sum of squared weights used on this tape (biases and norm offsets excluded)."""
    if coefficient == 0.0:
        return None
    total = None
    for name, leaf in sorted(tape.variables().items()):
        if name in tape.params.no_decay:
            continue
        term = ops.reduce_sum(ops.square(leaf))
        total = term if total is None else ops.add(total, term)
    return None if total is None else ops.mul(total, np.asarray(coefficient, dtype=tape.dtype))
