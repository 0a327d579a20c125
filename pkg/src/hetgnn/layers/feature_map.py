"""Initial hidden states from raw features.

A feature map is configured per set (node set name or "context") as a list
of branches. Each branch starts from one named feature and runs a list of
steps; a branch may instead be `{"make_empty": dim}`. Branch outputs are
concatenated into the set's "hidden_state".

    {"paper": [{"feature": "feat", "steps": [{"op": "dense", "units": 32}]}],
     "author": [{"make_empty": 0}],
     "field_of_study": [{"feature": "#id", "steps": [{"op": "hash_bucket", "buckets": 153},
                                                      {"op": "embed", "vocab": 153, "dim": 16}]}]}
"""

from typing import Mapping, Sequence

import numpy as np

from hetgnn.core import ops
from hetgnn.core.rng import fnv1a64
from hetgnn.core.tape import Tape, Var, value_of
from hetgnn.graph_tensor import CONTEXT, HIDDEN_STATE, GraphTensor, RaggedFeature, replace_features
from hetgnn.layers.base import Dense, LayerError, as_float

STEP_OPS = ("hash_bucket", "embed", "dense", "log1p", "ragged_mean_to_dense")


def hash_bucket(values, buckets: int) -> np.ndarray:
    """Maps strings (FNV-1a 64 of UTF-8) or integers to [0, buckets)."""
    if buckets < 1:
        raise LayerError("hash_bucket needs buckets >= 1")
    arr = np.asarray(values)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise LayerError(f"hash_bucket expects one scalar per item, got shape {arr.shape}")
    if arr.dtype == object or arr.dtype.kind in "US":
        return np.array([fnv1a64(str(v).encode("utf-8")) % buckets for v in arr.tolist()], dtype=np.int64)
    if arr.dtype.kind not in "iu":
        raise LayerError(f"hash_bucket expects strings or integers, got {arr.dtype}")
    return np.mod(arr.astype(np.int64), buckets)


def _ids(value) -> np.ndarray:
    arr = np.asarray(value_of(value))
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1 or arr.dtype.kind not in "iu":
        raise LayerError(f"embed expects integer ids of shape [n], got {arr.dtype} {arr.shape}")
    return arr.astype(np.int64)


class FeatureMap:
    def __init__(self, name: str, config: Mapping[str, Sequence[Mapping]]):
        self.name = name
        self.config = {k: list(v) for k, v in config.items()}
        for set_name, branches in self.config.items():
            for branch in branches:
                self._check_branch(set_name, branch)

    @staticmethod
    def _check_branch(set_name, branch):
        if "make_empty" in branch:
            return
        if "feature" not in branch:
            raise LayerError(f"{set_name}: branch needs 'feature' or 'make_empty'")
        for step in branch.get("steps", []):
            if step.get("op") not in STEP_OPS:
                raise LayerError(f"{set_name}: unknown feature step {step.get('op')!r}; expected one of {STEP_OPS}")

    def _apply(self, tape: Tape, where: str, value, steps):
        for i, step in enumerate(steps):
            op = step["op"]
            site = f"{self.name}/{where}/{i}"
            if op == "hash_bucket":
                value = hash_bucket(value_of(value), int(step["buckets"]))
            elif op == "embed":
                vocab, dim = int(step["vocab"]), int(step["dim"])
                ids = _ids(value)
                if ids.size and (ids.min() < 0 or ids.max() >= vocab):
                    raise LayerError(f"{where}: embedding id outside [0, {vocab})")
                table = tape.variable(f"{site}/embedding", (vocab, dim))
                value = ops.gather_rows(table, ids)
            elif op == "dense":
                value = Dense(f"{site}/dense", int(step["units"]), step.get("activation", "identity"))(tape, value)
            elif op == "log1p":
                value = ops.activation(as_float(tape, value), "log1p")
            elif op == "ragged_mean_to_dense":
                if not isinstance(value, RaggedFeature):
                    raise LayerError(f"{where}: ragged_mean_to_dense needs a ragged feature")
                value = value.row_means(tape.dtype)
        return value

    def hidden_state(self, tape: Tape, graph: GraphTensor, set_name: str):
        if set_name == CONTEXT:
            features, n = graph.context.features, graph.num_components
        else:
            piece = graph.piece(set_name)
            features, n = piece.features, piece.total_size
        if not self.config[set_name]:
            raise LayerError(f"feature map for {set_name!r} has no branches")
        parts = []
        for b, branch in enumerate(self.config[set_name]):
            if "make_empty" in branch:
                parts.append(np.zeros((n, int(branch["make_empty"])), dtype=tape.dtype))
                continue
            name = branch["feature"]
            if name not in features:
                raise LayerError(f"{set_name} has no feature {name!r}")
            value = self._apply(tape, f"{set_name}/{b}", features[name], branch.get("steps", []))
            if isinstance(value, RaggedFeature):
                raise LayerError(f"ragged feature {set_name}.{name} reached concat_to_hidden; "
                                 f"reduce it with ragged_mean_to_dense first")
            if not isinstance(value, Var) and np.asarray(value).dtype == object:
                raise LayerError(f"string feature {set_name}.{name} must be hashed and embedded first")
            parts.append(as_float(tape, value))
        if len(parts) == 1:
            return parts[0]
        return ops.concat_last(parts)

    def __call__(self, graph: GraphTensor, tape: Tape) -> GraphTensor:
        context = None
        node_states, edge_states = {}, {}
        for set_name in self.config:
            state = self.hidden_state(tape, graph, set_name)
            if set_name == CONTEXT:
                context = {HIDDEN_STATE: state}
            elif set_name in graph.node_sets:
                node_states[set_name] = {HIDDEN_STATE: state}
            elif set_name in graph.edge_sets:
                edge_states[set_name] = {HIDDEN_STATE: state}
            else:
                raise LayerError(f"feature map configures unknown set {set_name!r}")
        return replace_features(graph, context=context, node_sets=node_states, edge_sets=edge_states)


def map_features(graph: GraphTensor, config: Mapping, tape: Tape, name: str = "map_features") -> GraphTensor:
    return FeatureMap(name, config)(graph, tape)
