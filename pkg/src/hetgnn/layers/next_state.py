"""Next-state layers: combine a previous state with pooled conv outputs."""

from typing import Mapping, Optional

from hetgnn.core import ops
from hetgnn.core.tape import Tape, value_of
from hetgnn.layers.base import Dense, LayerError, layer_norm, maybe_dropout


class NextStateFromConcat:
    """act(W [prev, pooled_1, ..., pooled_k, (context)] + b), then dropout and layer norm."""

    def __init__(self, name: str, units: int, activation: str = "relu", dropout: float = 0.0,
                 use_layer_norm: bool = False):
        self.name = name
        self.dense = Dense(f"{name}/dense", units, activation)
        self.dropout = dropout
        self.use_layer_norm = use_layer_norm

    def __call__(self, tape: Tape, prev, pooled: Mapping[str, object], context=None):
        parts = [prev] + [pooled[k] for k in pooled]
        if context is not None:
            parts.append(context)
        out = self.dense(tape, ops.concat_last(parts) if len(parts) > 1 else parts[0])
        out = maybe_dropout(tape, out, self.dropout, f"{self.name}/dropout")
        if self.use_layer_norm:
            out = layer_norm(tape, f"{self.name}/layer_norm", out)
        return out


class RGCNNextState:
    """act(sum_j pooled_j + W_V h_v): the R-GCN update with separate per-edge-set weights.

    The per-edge-set weights live in the convs (mean-pooled SAGEMeanConv);
    this layer adds the self-transform.
    """

    def __init__(self, name: str, units: int, activation: str = "relu", use_bias: bool = False):
        self.name = name
        self.units = units
        self.self_transform = Dense(f"{name}/self", units, use_bias=use_bias)
        self.activation = activation

    def __call__(self, tape: Tape, prev, pooled: Mapping[str, object], context=None):
        if context is not None:
            raise LayerError("RGCNNextState takes no context input")
        total = self.self_transform(tape, prev)
        for name, value in pooled.items():
            if value_of(value).shape[1:] != (self.units,):
                raise LayerError(f"pooled input {name!r} has shape {list(value_of(value).shape)}, "
                                 f"expected [n, {self.units}]")
            total = ops.add(total, value)
        return ops.activation(total, self.activation)


class SingleInputNextState:
    """Takes the one pooled input as the new state (for convs like GCN that emit full states)."""

    name = "single_input"

    def __call__(self, tape: Tape, prev, pooled: Mapping[str, object], context=None):
        if len(pooled) != 1 or context is not None:
            raise LayerError(f"SingleInputNextState needs exactly one input, got {sorted(pooled)}")
        return next(iter(pooled.values()))


class IdentityNextState:
    """Keeps the previous state; the neutral element for graph updates."""

    name = "identity"

    def __call__(self, tape: Tape, prev, pooled: Mapping[str, object], context=None):
        return prev


class NextEdgeState:
    """New edge state from [edge state, source state, target state] (two-step messages)."""

    def __init__(self, name: str, units: int, activation: str = "relu", use_previous: bool = True,
                 dropout: float = 0.0):
        self.name = name
        self.dense = Dense(f"{name}/dense", units, activation)
        self.use_previous = use_previous
        self.dropout = dropout

    def __call__(self, tape: Tape, prev: Optional[object], source, target):
        parts = ([prev] if (self.use_previous and prev is not None) else []) + [source, target]
        out = self.dense(tape, ops.concat_last(parts))
        return maybe_dropout(tape, out, self.dropout, f"{self.name}/dropout")
