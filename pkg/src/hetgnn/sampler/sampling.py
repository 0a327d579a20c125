"""Rooted-subgraph sampling over a GraphStore.

Each seed runs the spec's ops in order. An op's frontier is the union of its
input ops' output nodes; every frontier node keeps all its incident edges
when its degree is at most sample_size, else a uniform sample without
replacement drawn from a stream keyed by (global_seed, sample_id, op_name,
node_index). Nodes and parallel edges are deduplicated, nodes renumbered
with the seed at local index 0 of its node set, and every schema feature is
attached from the store.
"""

from __future__ import annotations

import concurrent.futures
from typing import Iterator, Sequence

import numpy as np

from hetgnn.core.rng import stream
from hetgnn.graph_tensor import (Adjacency, Context, EdgeSet, GraphTensor, NodeSet, RaggedFeature,
                                 build_graph_tensor)
from hetgnn.sampler.spec import RANDOM_UNIFORM, SamplingSpec, validate_spec
from hetgnn.sampler.store import CSR, GraphStore, StoreError


class SamplingError(ValueError):
    pass


def choose_without_replacement(gen: np.random.Generator, n: int, k: int) -> list[int]:
    """k distinct positions of range(n) by a partial Fisher-Yates shuffle in O(k) memory."""
    swapped: dict[int, int] = {}
    chosen = []
    for i in range(k):
        j = i + int(gen.integers(n - i))
        vi, vj = swapped.get(i, i), swapped.get(j, j)
        swapped[j] = vi
        chosen.append(vj)
    return chosen


def sample_edges(csr: CSR, frontier: Sequence[int], sample_size: int, *, global_seed: int, sample_id: str,
                 op_name: str, strategy: str = RANDOM_UNIFORM) -> np.ndarray:
    """Edge ids sampled from each frontier node's adjacency range."""
    if strategy != RANDOM_UNIFORM:
        raise SamplingError(f"unsupported strategy {strategy!r}")
    picked = []
    for node in frontier:
        start, stop = int(csr.offsets[node]), int(csr.offsets[node + 1])
        degree = stop - start
        if degree == 0:
            continue
        if degree <= sample_size:
            picked.append(csr.edge_ids[start:stop])
            continue
        gen = stream(global_seed, sample_id, op_name, int(node))
        positions = np.sort(np.asarray(choose_without_replacement(gen, degree, sample_size), dtype=np.int64))
        picked.append(csr.edge_ids[start + positions])
    if not picked:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(picked)


def _take(value, index: np.ndarray):
    if isinstance(value, RaggedFeature):
        return value.take(index)
    return np.asarray(value)[index]


def _context_fill(spec) -> object:
    if spec.is_ragged:
        dtype = object if spec.dtype == "string" else np.dtype(spec.dtype)
        return RaggedFeature(np.zeros(1, dtype=np.int64), np.zeros((0,) + tuple(spec.shape[1:]), dtype=dtype))
    if spec.dtype == "string":
        out = np.empty((1,) + tuple(spec.shape), dtype=object)
        out[...] = ""
        return out
    return np.zeros((1,) + tuple(spec.shape), dtype=np.dtype(spec.dtype))


def sample_one(store: GraphStore, spec: SamplingSpec, seed_index: int, *, global_seed: int,
               sample_id: str) -> GraphTensor:
    """Runs the spec from one seed node and emits a single-component graph."""
    schema = store.schema
    seed_set = spec.seed_op.node_set_name
    outputs = {spec.seed_op.op_name: np.array([seed_index], dtype=np.int64)}
    nodes = {name: {int(seed_index)} if name == seed_set else set() for name in schema.node_sets}
    edges = {name: set() for name in schema.edge_sets}
    for op in spec.sampling_ops:
        table = store.edge_sets[op.edge_set_name]
        frontier = np.unique(np.concatenate([outputs[name] for name in op.input_op_names]))
        ids = sample_edges(table.csr(op.direction), frontier, op.sample_size, global_seed=global_seed,
                           sample_id=sample_id, op_name=op.op_name, strategy=op.strategy)
        edges[op.edge_set_name].update(int(e) for e in ids)
        far = table.target[ids] if op.direction == "forward" else table.source[ids]
        outputs[op.op_name] = np.unique(far)
        nodes[table.source_set].update(int(v) for v in table.source[ids])
        nodes[table.target_set].update(int(v) for v in table.target[ids])

    # Seed first, then ascending store index.
    local = {}
    order = {}
    for name, members in nodes.items():
        rest = sorted(members - ({int(seed_index)} if name == seed_set else set()))
        idx = np.array(([int(seed_index)] if name == seed_set else []) + rest, dtype=np.int64)
        order[name] = idx
        local[name] = {int(v): i for i, v in enumerate(idx)}

    node_sets = {}
    for name, table in store.node_sets.items():
        idx = order[name]
        node_sets[name] = NodeSet.from_fields([idx.size], {f: _take(v, idx) for f, v in table.features.items()})
    edge_sets = {}
    for name, table in store.edge_sets.items():
        # Parallel edges collapse to the lowest edge id.
        first = {}
        for e in sorted(edges[name]):
            key = (local[table.source_set][int(table.source[e])], local[table.target_set][int(table.target[e])])
            first.setdefault(key, e)
        keys = sorted(first)
        idx = np.array([first[k] for k in keys], dtype=np.int64)
        src = np.array([k[0] for k in keys], dtype=np.int64)
        tgt = np.array([k[1] for k in keys], dtype=np.int64)
        edge_sets[name] = EdgeSet.from_fields(
            [idx.size], Adjacency(table.source_set, src, table.target_set, tgt),
            {f: _take(v, idx) for f, v in table.features.items()})
    context = Context.from_fields({name: _context_fill(f) for name, f in schema.context.items()})
    return build_graph_tensor(context, node_sets, edge_sets)


def _resolve_seeds(store: GraphStore, spec: SamplingSpec, seeds: Sequence[str]) -> list[int]:
    table = store.node_sets[spec.seed_op.node_set_name]
    out = []
    for s in seeds:
        key = str(s)
        if key not in table.index:
            raise SamplingError(f"unknown seed id {key!r} in node set {spec.seed_op.node_set_name!r}")
        out.append(table.index[key])
    return out


def sample_subgraphs(store: GraphStore, spec: SamplingSpec, seeds: Sequence[str], *, global_seed: int = 0,
                     num_shards: int = 1) -> Iterator[GraphTensor]:
    """One rooted subgraph per seed id, in seed order, identical for any num_shards.

    Seeds are dealt round-robin to `num_shards` worker threads sharing the
    read-only store; results are reassembled in seed order.
    """
    if num_shards < 1:
        raise SamplingError("num_shards must be >= 1")
    try:
        validate_spec(spec, store.schema)
    except ValueError as e:
        raise SamplingError(str(e)) from None
    indices = _resolve_seeds(store, spec, seeds)
    ids = [str(s) for s in seeds]
    shards = [list(range(k, len(indices), num_shards)) for k in range(num_shards)]

    def run(positions):
        return [(p, sample_one(store, spec, indices[p], global_seed=global_seed, sample_id=ids[p]))
                for p in positions]

    results: list = [None] * len(indices)
    if num_shards == 1:
        parts = [run(shards[0])]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=num_shards) as pool:
            parts = list(pool.map(run, shards))
    for part in parts:
        for p, graph in part:
            results[p] = graph
    return iter(results)


def full_graph(store: GraphStore) -> GraphTensor:
    """The whole store as one component, for training without sampling."""
    node_sets = {name: NodeSet.from_fields([t.size], t.features) for name, t in store.node_sets.items()}
    edge_sets = {name: EdgeSet.from_fields([t.size], Adjacency(t.source_set, t.source, t.target_set, t.target),
                                           t.features)
                 for name, t in store.edge_sets.items()}
    context = Context.from_fields({name: _context_fill(f) for name, f in store.schema.context.items()})
    return build_graph_tensor(context, node_sets, edge_sets)


__all__ = ["SamplingError", "StoreError", "choose_without_replacement", "full_graph", "sample_edges",
           "sample_one", "sample_subgraphs"]
