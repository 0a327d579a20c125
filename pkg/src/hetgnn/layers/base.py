"""Shared pieces for layers: dense transforms and hidden-state lookup."""

import numpy as np

from hetgnn.core import ops
from hetgnn.core.tape import Tape, Var, value_of
from hetgnn.graph_tensor import CONTEXT, HIDDEN_STATE, SOURCE, TARGET, GraphTensor, RaggedFeature


class LayerError(ValueError):
    pass


def opposite(tag: str) -> str:
    if tag == SOURCE:
        return TARGET
    if tag == TARGET:
        return SOURCE
    raise LayerError(f"tag {tag!r} has no opposite endpoint")


def as_float(tape: Tape, value):
    """Casts integer or rank-1 inputs into a float [n, d] matrix."""
    if not isinstance(value, Var) and np.asarray(value).dtype != tape.dtype:
        value = np.asarray(value).astype(tape.dtype)
    if value_of(value).ndim == 1:
        value = ops.reshape(value, (-1, 1))
    return value


def get_state(graph: GraphTensor, set_name: str, feature: str = HIDDEN_STATE):
    if set_name == CONTEXT:
        features = graph.context.features
    else:
        features = graph.piece(set_name).features
    if feature not in features:
        raise LayerError(f"{set_name!r} has no {feature!r} feature")
    value = features[feature]
    if isinstance(value, RaggedFeature):
        raise LayerError(f"{set_name}.{feature} is ragged; hidden states must be dense")
    if value_of(value).ndim != 2:
        raise LayerError(f"{set_name}.{feature} must be rank 2, got shape {value_of(value).shape}")
    return value


class Dense:
    """y = activation(x @ W + b) with lazily created, name-keyed parameters."""

    def __init__(self, name: str, units: int, activation: str = "identity", use_bias: bool = True):
        self.name = name
        self.units = int(units)
        self.activation = activation
        self.use_bias = use_bias

    def __call__(self, tape: Tape, x):
        x = as_float(tape, x)
        d_in = value_of(x).shape[1]
        w = tape.variable(f"{self.name}/kernel", (d_in, self.units))
        b = tape.variable(f"{self.name}/bias", (self.units,), init="zeros", decay=False) if self.use_bias else None
        return ops.activation(ops.linear(x, w, b), self.activation)


def maybe_dropout(tape: Tape, x, rate: float, site: str):
    if rate <= 0.0 or not tape.training:
        return x
    return ops.dropout(x, rate, True, tape.rng(site))


def layer_norm(tape: Tape, name: str, x):
    d = value_of(x).shape[1]
    gamma = tape.variable(f"{name}/gamma", (d,), init="ones", decay=False)
    beta = tape.variable(f"{name}/beta", (d,), init="zeros", decay=False)
    return ops.layer_norm(x, gamma, beta)


def zeros_state(tape: Tape, n: int, d: int = 0) -> np.ndarray:
    return np.zeros((n, d), dtype=tape.dtype)


def check_tag(tag: str, allowed=(SOURCE, TARGET)):
    if tag not in allowed:
        raise LayerError(f"receiver_tag must be one of {allowed}, got {tag!r}")
