"""Trainable graph layers: feature maps, convolutions, next states, graph updates."""

from hetgnn.layers.base import Dense, LayerError
from hetgnn.layers.convs import EdgePoolConv, GATv2Conv, GCNConv, SAGEMeanConv, VanillaMPNNConv
from hetgnn.layers.feature_map import FeatureMap, hash_bucket, map_features
from hetgnn.layers.graph_update import (ContextUpdate, EdgeSetUpdate, GraphUpdate, NodeSetUpdate, l2_penalty,
                                        readout_root)
from hetgnn.layers.models import GNNModel, expand_architecture, vanilla_mpnn_graph_update
from hetgnn.layers.next_state import (IdentityNextState, NextEdgeState, NextStateFromConcat, RGCNNextState,
                                      SingleInputNextState)

__all__ = [
    "ContextUpdate", "Dense", "EdgePoolConv", "EdgeSetUpdate", "FeatureMap", "GATv2Conv", "GCNConv",
    "GNNModel", "GraphUpdate", "IdentityNextState", "LayerError", "NextEdgeState", "NextStateFromConcat",
    "NodeSetUpdate", "RGCNNextState", "SAGEMeanConv", "SingleInputNextState", "VanillaMPNNConv",
    "expand_architecture", "hash_bucket", "l2_penalty", "map_features", "readout_root",
    "vanilla_mpnn_graph_update",
]
