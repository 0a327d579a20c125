"""Convolutions: per-edge-set messages pooled at the receiver.

Every conv is called as `conv(tape, graph, set_name)` and returns one row per
receiver. For SOURCE/TARGET receivers `set_name` is an edge set; GATv2 also
accepts receiver_tag=CONTEXT, where `set_name` is the node set (or edge set)
whose items attend onto their component's context.
"""

from typing import Optional

import numpy as np

from hetgnn import exchange_ops as xo
from hetgnn.core import ops
from hetgnn.core.tape import Tape, value_of
from hetgnn.graph_tensor import CONTEXT, HIDDEN_STATE, SOURCE, TARGET, GraphTensor
from hetgnn.layers.base import Dense, LayerError, check_tag, get_state, maybe_dropout, opposite


class Conv:
    receiver_tag = TARGET

    def receiver_set(self, graph: GraphTensor, set_name: str) -> str:
        if self.receiver_tag == CONTEXT:
            return CONTEXT
        if set_name not in graph.edge_sets:
            raise LayerError(f"unknown edge set {set_name!r}")
        return graph.edge_sets[set_name].adjacency.node_set_name(self.receiver_tag)

    def _endpoints(self, graph: GraphTensor, edge_set: str):
        if edge_set not in graph.edge_sets:
            raise LayerError(f"unknown edge set {edge_set!r}")
        adj = graph.edge_sets[edge_set].adjacency
        sender_tag = opposite(self.receiver_tag)
        return (adj.node_set_name(sender_tag), adj.indices(sender_tag),
                adj.node_set_name(self.receiver_tag), adj.indices(self.receiver_tag))


class VanillaMPNNConv(Conv):
    """message = act(W [h_sender, h_receiver, (edge)] + b), pooled per receiver."""

    def __init__(self, name: str, message_dim: int, receiver_tag: str = TARGET, reduce_type: str = "sum",
                 activation: str = "relu", receiver_feature: Optional[str] = HIDDEN_STATE,
                 sender_edge_feature: Optional[str] = None, dropout: float = 0.0):
        check_tag(receiver_tag)
        self.name = name
        self.receiver_tag = receiver_tag
        self.reduce_type = reduce_type
        self.receiver_feature = receiver_feature
        self.sender_edge_feature = sender_edge_feature
        self.dropout = dropout
        self.message_fn = Dense(f"{name}/message", message_dim, activation)

    def __call__(self, tape: Tape, graph: GraphTensor, edge_set: str):
        sender_set, _, receiver_set, _ = self._endpoints(graph, edge_set)
        sender_tag = opposite(self.receiver_tag)
        parts = [xo.broadcast_node_to_edges(graph, edge_set, sender_tag,
                                            feature_value=get_state(graph, sender_set))]
        if self.receiver_feature is not None:
            parts.append(xo.broadcast_node_to_edges(
                graph, edge_set, self.receiver_tag,
                feature_value=get_state(graph, receiver_set, self.receiver_feature)))
        if self.sender_edge_feature is not None:
            parts.append(get_state(graph, edge_set, self.sender_edge_feature))
        messages = self.message_fn(tape, ops.concat_last(parts) if len(parts) > 1 else parts[0])
        messages = maybe_dropout(tape, messages, self.dropout, f"{self.name}/dropout")
        return xo.pool_edges_to_node(graph, edge_set, self.receiver_tag, self.reduce_type,
                                     feature_value=messages)


class GCNConv(Conv):
    """Graph convolution with symmetric normalization and an implicit self-loop.

    h'_v = act(sum over u in N(v) + {v} of W h_u / sqrt(d_u d_v) + b), where d is
    the in-degree plus one. The self-loop is added analytically.
    """

    def __init__(self, name: str, units: int, receiver_tag: str = TARGET, activation: str = "relu",
                 use_bias: bool = False):
        check_tag(receiver_tag)
        self.name = name
        self.units = units
        self.receiver_tag = receiver_tag
        self.activation = activation
        self.use_bias = use_bias

    def __call__(self, tape: Tape, graph: GraphTensor, edge_set: str):
        sender_set, send, receiver_set, recv = self._endpoints(graph, edge_set)
        if sender_set != receiver_set:
            raise LayerError(f"GCN needs a homogeneous edge set; {edge_set!r} connects "
                             f"{sender_set!r} and {receiver_set!r}")
        h = get_state(graph, receiver_set)
        n = graph.node_sets[receiver_set].total_size
        w = tape.variable(f"{self.name}/kernel", (value_of(h).shape[1], self.units))
        hw = ops.linear(h, w)
        deg = np.bincount(recv, minlength=n).astype(np.float64) + 1.0
        coef = (1.0 / np.sqrt(deg[send] * deg[recv])).astype(tape.dtype).reshape(-1, 1)
        messages = ops.mul(ops.gather_rows(hw, send), coef)
        out = ops.segment_reduce(messages, recv, n, "sum")
        out = ops.add(out, ops.mul(hw, (1.0 / deg).astype(tape.dtype).reshape(-1, 1)))
        if self.use_bias:
            out = ops.add(out, tape.variable(f"{self.name}/bias", (self.units,), init="zeros", decay=False))
        return ops.activation(out, self.activation)


class SAGEMeanConv(Conv):
    """Mean over neighbors of W_E h_u; receivers without neighbors get 0.

    With one conv per edge set and RGCNNextState this is R-GCN; with a single
    edge set it is GraphSAGE's mean aggregator.
    """

    def __init__(self, name: str, units: int, receiver_tag: str = TARGET):
        check_tag(receiver_tag)
        self.name = name
        self.units = units
        self.receiver_tag = receiver_tag

    def __call__(self, tape: Tape, graph: GraphTensor, edge_set: str):
        sender_set, send, receiver_set, recv = self._endpoints(graph, edge_set)
        h = get_state(graph, sender_set)
        w = tape.variable(f"{self.name}/kernel", (value_of(h).shape[1], self.units))
        transformed = ops.linear(h, w)
        return ops.segment_reduce(ops.gather_rows(transformed, send), recv,
                                  graph.node_sets[receiver_set].total_size, "mean")


class EdgePoolConv(Conv):
    """Pools a stored edge state (from an edge-set update) to the receiver."""

    def __init__(self, receiver_tag: str = TARGET, reduce_type: str = "sum", feature: str = HIDDEN_STATE):
        check_tag(receiver_tag)
        self.name = "edge_pool"
        self.receiver_tag = receiver_tag
        self.reduce_type = reduce_type
        self.feature = feature

    def __call__(self, tape: Tape, graph: GraphTensor, edge_set: str):
        return xo.pool_edges_to_node(graph, edge_set, self.receiver_tag, self.reduce_type,
                                     feature_value=get_state(graph, edge_set, self.feature))


class GATv2Conv(Conv):
    """Multi-head GATv2 attention from senders onto one receiver.

    query = W_q h_receiver, value = W_n h_sender_node + W_e h_sender_edge,
    logit_h = a_h . act(query_h + value_h), softmax per receiver and head,
    output = relu(concat_h sum coefficient * value_h).
    """

    def __init__(self, name: str, num_heads: int, per_head_channels: int, receiver_tag: str = TARGET,
                 receiver_feature: str = HIDDEN_STATE, sender_node_feature: Optional[str] = HIDDEN_STATE,
                 sender_edge_feature: Optional[str] = None, edge_dropout: float = 0.0,
                 attention_activation: str = "leaky_relu", activation: str = "relu"):
        check_tag(receiver_tag, (SOURCE, TARGET, CONTEXT))
        if sender_node_feature is None and sender_edge_feature is None:
            raise LayerError("GATv2 needs at least one of sender_node_feature and sender_edge_feature")
        self.name = name
        self.num_heads = int(num_heads)
        self.per_head_channels = int(per_head_channels)
        self.receiver_tag = receiver_tag
        self.receiver_feature = receiver_feature
        self.sender_node_feature = sender_node_feature
        self.sender_edge_feature = sender_edge_feature
        self.edge_dropout = edge_dropout
        self.attention_activation = attention_activation
        self.activation = activation
        width = self.num_heads * self.per_head_channels
        self.w_query = Dense(f"{name}/query", width)
        self.w_sender_node = Dense(f"{name}/value_node", width) if sender_node_feature else None
        self.w_sender_edge = (Dense(f"{name}/value_edge", width, use_bias=self.w_sender_node is None)
                              if sender_edge_feature else None)

    def _routes(self, graph: GraphTensor, set_name: str):
        """(receiver set, receiver ids, n_receivers, sender node values, sender edge values)."""
        if self.receiver_tag == CONTEXT:
            if set_name in graph.node_sets:
                if self.sender_edge_feature is not None:
                    raise LayerError(f"CONTEXT attention over node set {set_name!r} has no edges "
                                     f"for sender_edge_feature")
                node_input = get_state(graph, set_name, self.sender_node_feature)
                edge_input = None
            elif set_name in graph.edge_sets:
                if self.sender_node_feature is not None or self.sender_edge_feature is None:
                    raise LayerError("CONTEXT attention over an edge set takes sender_edge_feature only "
                                     "(set sender_node_feature=None)")
                node_input, edge_input = None, get_state(graph, set_name, self.sender_edge_feature)
            else:
                raise LayerError(f"unknown set {set_name!r}")
            return CONTEXT, graph.component_ids(set_name), graph.num_components, node_input, edge_input
        sender_set, send, receiver_set, recv = self._endpoints(graph, set_name)
        node_input = None
        if self.sender_node_feature is not None:
            node_input = (get_state(graph, sender_set, self.sender_node_feature), send)
        edge_input = None
        if self.sender_edge_feature is not None:
            edge_input = get_state(graph, set_name, self.sender_edge_feature)
        return receiver_set, recv, graph.node_sets[receiver_set].total_size, node_input, edge_input

    def _attend(self, tape: Tape, graph: GraphTensor, set_name: str):
        receiver_set, recv, n, node_input, edge_input = self._routes(graph, set_name)
        heads, channels = self.num_heads, self.per_head_channels
        m = recv.shape[0]
        query = ops.gather_rows(self.w_query(tape, get_state(graph, receiver_set, self.receiver_feature)), recv)
        terms = []
        if isinstance(node_input, tuple):
            states, send = node_input
            terms.append(ops.gather_rows(self.w_sender_node(tape, states), send))
        elif node_input is not None:
            terms.append(self.w_sender_node(tape, node_input))
        if edge_input is not None:
            terms.append(self.w_sender_edge(tape, edge_input))
        value = terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])
        features = ops.activation(ops.add(query, value), self.attention_activation)
        a = tape.variable(f"{self.name}/attention_logits", (heads, channels))
        logits = ops.reduce_sum(ops.mul(ops.reshape(features, (m, heads, channels)), a), axis=2)
        return recv, n, value, ops.segment_softmax(logits, recv, n)

    def __call__(self, tape: Tape, graph: GraphTensor, set_name: str):
        recv, n, value, coefficients = self._attend(tape, graph, set_name)
        heads, channels = self.num_heads, self.per_head_channels
        m = recv.shape[0]
        coefficients = maybe_dropout(tape, coefficients, self.edge_dropout, f"{self.name}/edge_dropout")
        messages = ops.mul(ops.reshape(value, (m, heads, channels)), ops.reshape(coefficients, (m, heads, 1)))
        pooled = ops.segment_reduce(ops.reshape(messages, (m, heads * channels)), recv, n, "sum")
        return ops.activation(pooled, self.activation)

    def attention_coefficients(self, tape: Tape, graph: GraphTensor, set_name: str) -> np.ndarray:
        """Softmax coefficients [m, heads] before edge dropout."""
        return value_of(self._attend(tape, graph, set_name)[3])
