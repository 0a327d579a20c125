"""Model assembly from a JSON configuration.

A model config has a feature map plus either explicit rounds or an
architecture shortcut that expands into rounds:

    {"feature_map": {...},
     "architecture": {"type": "vanilla_mpnn", "rounds": 2, "units": 32, "message_dim": 32,
                      "receiver_tag": "target", "node_sets": {"paper": ["cites", "has_topic"]},
                      "reduce_type": "sum", "dropout": 0.0, "layer_norm": false,
                      "share_weights": false}}

Explicit rounds name one conv per (node set, edge set) and a next state:

    {"rounds": [{"node_sets": {"paper": {
         "convs": {"cites": {"type": "gatv2", "num_heads": 2, "per_head_channels": 8}},
         "next_state": {"type": "concat", "units": 16}}}}]}

Conv types: vanilla_mpnn, gcn, sage_mean, gatv2, edge_pool. Next-state
types: concat, rgcn, single, identity. Rounds may also hold "edge_sets"
({name: {"units": d}}) and "context" ({"units": d, "node_sets": [...]}).
"""

import copy
from typing import Mapping

from hetgnn.core.tape import Tape
from hetgnn.graph_tensor import GraphTensor
from hetgnn.layers.base import LayerError
from hetgnn.layers.convs import EdgePoolConv, GATv2Conv, GCNConv, SAGEMeanConv, VanillaMPNNConv
from hetgnn.layers.feature_map import FeatureMap
from hetgnn.layers.graph_update import ContextUpdate, EdgeSetUpdate, GraphUpdate, NodeSetUpdate
from hetgnn.layers.next_state import (IdentityNextState, NextEdgeState, NextStateFromConcat, RGCNNextState,
                                      SingleInputNextState)

ARCHITECTURES = ("vanilla_mpnn", "gcn", "sage", "rgcn", "gatv2")


def make_conv(name: str, cfg: Mapping):
    kind = cfg.get("type")
    tag = cfg.get("receiver_tag", "target")
    if kind == "vanilla_mpnn":
        return VanillaMPNNConv(name, int(cfg["message_dim"]), tag, cfg.get("reduce_type", "sum"),
                               cfg.get("activation", "relu"),
                               receiver_feature=None if cfg.get("receiver_feature", True) is False else "hidden_state",
                               sender_edge_feature=cfg.get("sender_edge_feature"),
                               dropout=float(cfg.get("dropout", 0.0)))
    if kind == "gcn":
        return GCNConv(name, int(cfg["units"]), tag, cfg.get("activation", "relu"), bool(cfg.get("use_bias", False)))
    if kind == "sage_mean":
        return SAGEMeanConv(name, int(cfg["units"]), tag)
    if kind == "gatv2":
        return GATv2Conv(name, int(cfg["num_heads"]), int(cfg["per_head_channels"]), tag,
                         sender_node_feature=cfg.get("sender_node_feature", "hidden_state"),
                         sender_edge_feature=cfg.get("sender_edge_feature"),
                         edge_dropout=float(cfg.get("edge_dropout", 0.0)),
                         attention_activation=cfg.get("attention_activation", "leaky_relu"),
                         activation=cfg.get("activation", "relu"))
    if kind == "edge_pool":
        return EdgePoolConv(tag, cfg.get("reduce_type", "sum"))
    raise LayerError(f"unknown conv type {kind!r}")


def make_next_state(name: str, cfg: Mapping):
    kind = cfg.get("type", "concat")
    if kind == "concat":
        return NextStateFromConcat(name, int(cfg["units"]), cfg.get("activation", "relu"),
                                   float(cfg.get("dropout", 0.0)), bool(cfg.get("layer_norm", False)))
    if kind == "rgcn":
        return RGCNNextState(name, int(cfg["units"]), cfg.get("activation", "relu"), bool(cfg.get("use_bias", False)))
    if kind == "single":
        return SingleInputNextState()
    if kind == "identity":
        return IdentityNextState()
    raise LayerError(f"unknown next_state type {kind!r}")


def make_graph_update(prefix: str, cfg: Mapping) -> GraphUpdate:
    node_sets = {}
    for node_set, ncfg in cfg.get("node_sets", {}).items():
        convs = {edge_set: make_conv(f"{prefix}/{node_set}/{edge_set}", ccfg)
                 for edge_set, ccfg in ncfg.get("convs", {}).items()}
        next_state = make_next_state(f"{prefix}/{node_set}/next_state", ncfg.get("next_state", {"type": "identity"}))
        node_sets[node_set] = NodeSetUpdate(convs, next_state, bool(ncfg.get("context_input", False)))
    edge_sets = {name: EdgeSetUpdate(NextEdgeState(f"{prefix}/{name}/edge_state", int(ecfg["units"]),
                                                   ecfg.get("activation", "relu")))
                 for name, ecfg in cfg.get("edge_sets", {}).items()}
    context = None
    if "context" in cfg:
        ccfg = cfg["context"]
        context = ContextUpdate(f"{prefix}/context", int(ccfg["units"]), ccfg.get("node_sets", []),
                                ccfg.get("reduce_type", "mean"))
    return GraphUpdate(node_sets, edge_sets, context)


def expand_architecture(arch: Mapping) -> list[dict]:
    """Turns an architecture shortcut into a list of explicit round configs."""
    kind = arch.get("type")
    if kind not in ARCHITECTURES:
        raise LayerError(f"unknown architecture {kind!r}; expected one of {ARCHITECTURES}")
    tag = arch.get("receiver_tag", "target")
    units = int(arch["units"])
    dropout = float(arch.get("dropout", 0.0))
    layer_norm = bool(arch.get("layer_norm", False))
    node_set_round = {}
    for node_set, edge_sets in arch["node_sets"].items():
        if kind == "vanilla_mpnn":
            conv = {"type": "vanilla_mpnn", "message_dim": int(arch.get("message_dim", units)),
                    "receiver_tag": tag, "reduce_type": arch.get("reduce_type", "sum"), "dropout": dropout}
            nxt = {"type": "concat", "units": units, "dropout": dropout, "layer_norm": layer_norm}
        elif kind == "gcn":
            if len(edge_sets) != 1:
                raise LayerError("gcn architecture takes exactly one edge set per node set")
            conv = {"type": "gcn", "units": units, "receiver_tag": tag}
            nxt = {"type": "single"}
        elif kind in ("sage", "rgcn"):
            conv = {"type": "sage_mean", "units": units, "receiver_tag": tag}
            nxt = {"type": "rgcn", "units": units}
        else:
            heads = int(arch.get("num_heads", 2))
            conv = {"type": "gatv2", "num_heads": heads, "per_head_channels": units // heads,
                    "receiver_tag": tag, "edge_dropout": dropout}
            nxt = {"type": "concat", "units": units, "dropout": dropout, "layer_norm": layer_norm}
        node_set_round[node_set] = {"convs": {e: dict(conv) for e in edge_sets}, "next_state": nxt}
    return [copy.deepcopy({"node_sets": node_set_round}) for _ in range(int(arch.get("rounds", 1)))]


class GNNModel:
    """Feature map followed by graph-update rounds; returns the updated graph."""

    def __init__(self, config: Mapping, name: str = "gnn"):
        self.config = copy.deepcopy(dict(config))
        self.name = name
        self.feature_map = FeatureMap(f"{name}/map_features", self.config.get("feature_map", {}))
        if "architecture" in self.config:
            rounds = expand_architecture(self.config["architecture"])
            shared = bool(self.config["architecture"].get("share_weights", False))
        else:
            rounds = list(self.config.get("rounds", []))
            shared = bool(self.config.get("share_weights", False))
        if shared and rounds:
            update = make_graph_update(f"{name}/shared", rounds[0])
            self.updates = [update] * len(rounds)
        else:
            self.updates = [make_graph_update(f"{name}/round{i}", r) for i, r in enumerate(rounds)]

    def __call__(self, graph: GraphTensor, tape: Tape) -> GraphTensor:
        if self.feature_map.config:
            graph = self.feature_map(graph, tape)
        for update in self.updates:
            graph = update(graph, tape)
        return graph


def vanilla_mpnn_graph_update(name: str, node_sets: Mapping[str, list], units: int, message_dim: int,
                              receiver_tag: str = "target", reduce_type: str = "sum", dropout: float = 0.0,
                              use_layer_norm: bool = False) -> GraphUpdate:
    """One round of the bundled MPNN: dense-ReLU messages, concat next state, optional layer norm."""
    rounds = expand_architecture({"type": "vanilla_mpnn", "rounds": 1, "units": units, "message_dim": message_dim,
                                  "receiver_tag": receiver_tag, "node_sets": node_sets,
                                  "reduce_type": reduce_type, "dropout": dropout, "layer_norm": use_layer_norm})
    return make_graph_update(name, rounds[0])
