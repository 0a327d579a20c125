"""Sampling specs: a DAG of edge-sampling ops rooted at a seed op.

Op names follow the usual rendering of generated sampling specs:
the seed op is "SEED->{node_set}", an op with one input is
"{input node set}->{target node set}", and an op over a join is
"({input op names joined by '|'})->{target node set}". Ops are emitted in
topological order, taking the lexicographically smallest ready op first.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
from typing import Optional, Sequence

from hetgnn.graph_schema import GraphSchema

RANDOM_UNIFORM = "RANDOM_UNIFORM"
STRATEGIES = (RANDOM_UNIFORM,)
DIRECTIONS = ("forward", "reverse")


class SpecError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class SeedOp:
    op_name: str
    node_set_name: str


@dataclasses.dataclass(frozen=True)
class SamplingOp:
    op_name: str
    input_op_names: tuple
    edge_set_name: str
    sample_size: int
    strategy: str = RANDOM_UNIFORM
    direction: str = "forward"


@dataclasses.dataclass(frozen=True)
class SamplingSpec:
    seed_op: SeedOp
    sampling_ops: tuple

    def to_dict(self) -> dict:
        return {
            "seed_op": {"op_name": self.seed_op.op_name, "node_set_name": self.seed_op.node_set_name},
            "sampling_ops": [
                {"op_name": op.op_name, "input_op_names": list(op.input_op_names),
                 "edge_set_name": op.edge_set_name, "sample_size": op.sample_size,
                 "strategy": op.strategy, "direction": op.direction}
                for op in self.sampling_ops],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def spec_from_dict(doc) -> SamplingSpec:
    try:
        seed = SeedOp(str(doc["seed_op"]["op_name"]), str(doc["seed_op"]["node_set_name"]))
        ops = tuple(
            SamplingOp(str(op["op_name"]), tuple(str(x) for x in op["input_op_names"]), str(op["edge_set_name"]),
                       int(op["sample_size"]), str(op.get("strategy", RANDOM_UNIFORM)),
                       str(op.get("direction", "forward")))
            for op in doc.get("sampling_ops", []))
    except (KeyError, TypeError, ValueError) as e:
        raise SpecError(f"malformed sampling spec: {e!r}") from None
    return SamplingSpec(seed, ops)


def parse_spec(text: str) -> SamplingSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return spec_from_dict(doc)


def read_spec(path: str) -> SamplingSpec:
    with open(path, encoding="utf-8") as f:
        return parse_spec(f.read())


def validate_spec(spec: SamplingSpec, schema: GraphSchema) -> dict[str, str]:
    """Checks the spec against the schema; returns the node set each op produces.

    Ops must appear after all of their inputs, which also rules out cycles.
    """
    if spec.seed_op.node_set_name not in schema.node_sets:
        raise SpecError(f"seed op uses unknown node set {spec.seed_op.node_set_name!r}")
    produced = {spec.seed_op.op_name: spec.seed_op.node_set_name}
    names = [spec.seed_op.op_name] + [op.op_name for op in spec.sampling_ops]
    if len(set(names)) != len(names):
        raise SpecError("op names must be unique")
    later = set(names)
    for op in spec.sampling_ops:
        later.discard(op.op_name)
        if op.edge_set_name not in schema.edge_sets:
            raise SpecError(f"op {op.op_name!r} samples unknown edge set {op.edge_set_name!r}")
        if op.direction not in DIRECTIONS:
            raise SpecError(f"op {op.op_name!r}: direction must be one of {DIRECTIONS}")
        if op.strategy not in STRATEGIES:
            raise SpecError(f"op {op.op_name!r}: unsupported strategy {op.strategy!r}")
        if op.sample_size < 1:
            raise SpecError(f"op {op.op_name!r}: sample_size must be >= 1")
        if not op.input_op_names:
            raise SpecError(f"op {op.op_name!r} has no inputs")
        es = schema.edge_sets[op.edge_set_name]
        origin, far = (es.source, es.target) if op.direction == "forward" else (es.target, es.source)
        for name in op.input_op_names:
            if name not in produced:
                kind = "cycle or forward reference" if name in later or name == op.op_name else "unknown op"
                raise SpecError(f"op {op.op_name!r}: input {name!r} is a {kind}")
            if produced[name] != origin:
                raise SpecError(f"op {op.op_name!r}: input {name!r} yields {produced[name]!r} nodes but "
                                f"{op.edge_set_name!r} ({op.direction}) starts at {origin!r}")
        produced[op.op_name] = far
    return produced


class _Pending:
    def __init__(self, name, inputs, edge_set, size, strategy, direction, target):
        self.name = name
        self.inputs = tuple(inputs)
        self.edge_set = edge_set
        self.size = size
        self.strategy = strategy
        self.direction = direction
        self.target = target


class SamplingSpecBuilder:
    """Builds a SamplingSpec from seed / sample / join calls."""

    def __init__(self, schema: GraphSchema, default_strategy: str = RANDOM_UNIFORM):
        if default_strategy not in STRATEGIES:
            raise SpecError(f"unsupported strategy {default_strategy!r}")
        self.schema = schema
        self.default_strategy = default_strategy
        self._seed: Optional[SeedOp] = None
        self._ops: list[_Pending] = []
        self._names: set[str] = set()

    def seed(self, node_set: str) -> "Step":
        if self._seed is not None:
            raise SpecError("a spec has exactly one seed op")
        if node_set not in self.schema.node_sets:
            raise SpecError(f"seed uses unknown node set {node_set!r}")
        self._seed = SeedOp(f"SEED->{node_set}", node_set)
        self._names.add(self._seed.op_name)
        return Step(self, (self._seed.op_name,), node_set)

    def _unique(self, name: str) -> str:
        if name not in self._names:
            return name
        k = 1
        while f"{name}.{k}" in self._names:
            k += 1
        return f"{name}.{k}"

    def _add(self, inputs: "Step", size: int, edge_set: str, direction: str, strategy: Optional[str]) -> "Step":
        if edge_set not in self.schema.edge_sets:
            raise SpecError(f"unknown edge set {edge_set!r}")
        if direction not in DIRECTIONS:
            raise SpecError(f"direction must be one of {DIRECTIONS}")
        es = self.schema.edge_sets[edge_set]
        origin, far = (es.source, es.target) if direction == "forward" else (es.target, es.source)
        if inputs.node_set != origin:
            raise SpecError(f"cannot sample {edge_set!r} ({direction}) from {inputs.node_set!r} nodes; "
                            f"it starts at {origin!r}")
        if len(inputs.op_names) == 1:
            prefix = inputs.node_set
        else:
            prefix = "(" + "|".join(inputs.op_names) + ")"
        name = self._unique(f"{prefix}->{far}")
        self._names.add(name)
        self._ops.append(_Pending(name, inputs.op_names, edge_set, int(size),
                                  strategy or self.default_strategy, direction, far))
        return Step(self, (name,), far)

    def build(self) -> SamplingSpec:
        if self._seed is None:
            raise SpecError("no seed op")
        # Kahn's algorithm, smallest ready op name first.
        done = {self._seed.op_name}
        remaining = {op.name: op for op in self._ops}
        ordered = []
        ready = [op.name for op in self._ops if set(op.inputs) <= done]
        heapq.heapify(ready)
        queued = set(ready)
        while ready:
            name = heapq.heappop(ready)
            op = remaining.pop(name)
            ordered.append(SamplingOp(op.name, op.inputs, op.edge_set, op.size, op.strategy, op.direction))
            done.add(name)
            for other in remaining.values():
                if other.name not in queued and set(other.inputs) <= done:
                    heapq.heappush(ready, other.name)
                    queued.add(other.name)
        if remaining:
            raise SpecError(f"ops {sorted(remaining)} are part of a cycle")
        spec = SamplingSpec(self._seed, tuple(ordered))
        validate_spec(spec, self.schema)
        return spec


class Step:
    """A handle on the nodes produced by one op (or a join of ops of one node set)."""

    def __init__(self, builder: SamplingSpecBuilder, op_names: Sequence[str], node_set: str):
        self.builder = builder
        self.op_names = tuple(op_names)
        self.node_set = node_set

    def sample(self, sample_size: int, edge_set: str, direction: str = "forward",
               strategy: Optional[str] = None) -> "Step":
        return self.builder._add(self, sample_size, edge_set, direction, strategy)

    def join(self, others: Sequence["Step"]) -> "Step":
        names = list(self.op_names)
        for other in others:
            if other.node_set != self.node_set:
                raise SpecError(f"cannot join {other.node_set!r} nodes with {self.node_set!r} nodes")
            names.extend(n for n in other.op_names if n not in names)
        return Step(self.builder, names, self.node_set)

    def build(self) -> SamplingSpec:
        return self.builder.build()
