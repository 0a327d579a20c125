"""Acceptance gate: one test per criterion, with the required tolerances and time limits."""

import time

import numpy as np
import pytest

from conftest import DATA
from hetgnn.core import ops
from hetgnn.core.tape import Parameters, Tape, value_of
from hetgnn.exchange_ops import (broadcast_context_to_nodes, broadcast_node_to_edges, edge_softmax,
                                 pool_edges_to_context, pool_edges_to_node, pool_nodes_to_context)
from hetgnn.graph_schema import read_schema, schema_from_dict, validate_graph
from hetgnn.graph_tensor import (HIDDEN_STATE, SOURCE, TARGET, SizeTargets, merge_batch, pad_to_total_sizes,
                                 replace_features)
from hetgnn.io_format import decode_graph, encode_graph
from hetgnn.layers import (GATv2Conv, GCNConv, GNNModel, NextStateFromConcat, NodeSetUpdate, RGCNNextState,
                           SAGEMeanConv, VanillaMPNNConv, readout_root)
from hetgnn.runner import (TrainerConfig, compute_task_loss, dump_artifact, evaluate, forward_batch,
                           make_two_community_dataset, params_equal, parse_artifact, predict, root_binary,
                           root_multiclass, run_training)
from hetgnn.runner.synthetic import MODEL, TASK
from hetgnn.runner.tasks import task_from_dict
from hetgnn.sampler import (SamplingSpecBuilder, build_csr, build_graph_store, sample_edges, sample_subgraphs)
from oracles import (SAMPLER_SCHEMA, bfs_sample, component_matrix, dense_gcn, dense_pool, dense_softmax,
                     f64_params, fd_gradient_check, incidence, random_hetero_graph, random_homogeneous_graph,
                     random_store_tables, random_users_items_graph)


# 1. Exchange ops against dense incidence oracles ---------------------------

def _integer_valued(g, rng):
    """Swaps float features for small integers so every summation order is exact."""
    def ints(shape):
        return rng.integers(-50, 50, size=shape).astype(np.float64)
    return replace_features(
        g, node_sets={n: {"k": ints((ns.total_size, 2))} for n, ns in g.node_sets.items()},
        edge_sets={n: {"k": ints((es.total_size, 2))} for n, es in g.edge_sets.items()})


def test_1_exchange_ops_match_dense_oracles():
    start = time.perf_counter()
    for i in range(200):
        rng = np.random.default_rng(10_000 + i)
        components = int(rng.integers(1, 4))
        g = random_hetero_graph(rng, max_nodes=16 // components, max_node_sets=3, max_edge_sets=4,
                                num_components=components)
        g = _integer_valued(g, rng)
        for name, es in g.edge_sets.items():
            adj = es.adjacency
            m = es.total_size
            for tag, idx, node_set in ((SOURCE, adj.source, adj.source_set), (TARGET, adj.target, adj.target_set)):
                b = incidence(idx, m, g.node_sets[node_set].total_size)
                x = g.node_sets[node_set].features["k"]
                y, yf = es.features["k"], es.features[HIDDEN_STATE]
                assert np.array_equal(broadcast_node_to_edges(g, name, tag, feature_name="k"), b @ x)
                for reduce_type in ("sum", "max", "min"):
                    assert np.array_equal(pool_edges_to_node(g, name, tag, reduce_type, feature_value=y),
                                          dense_pool(b, y, reduce_type))
                np.testing.assert_allclose(pool_edges_to_node(g, name, tag, "mean", feature_value=yf),
                                           dense_pool(b, yf, "mean"), atol=1e-6, rtol=0)
                np.testing.assert_allclose(edge_softmax(g, name, tag, yf), dense_softmax(b, yf), atol=1e-6, rtol=0)
            c = component_matrix(es.sizes)
            assert np.array_equal(pool_edges_to_context(g, name, "sum", feature_name="k"), c.T @ es.features["k"])
        for name, ns in g.node_sets.items():
            c = component_matrix(ns.sizes)
            ctx = g.context.features[HIDDEN_STATE]
            assert np.array_equal(broadcast_context_to_nodes(g, name, feature_value=ctx), c @ ctx)
            for reduce_type in ("sum", "max"):
                assert np.array_equal(pool_nodes_to_context(g, name, reduce_type, feature_name="k"),
                                      dense_pool(c, ns.features["k"], reduce_type))
            np.testing.assert_allclose(pool_nodes_to_context(g, name, "mean", feature_name=HIDDEN_STATE),
                                       dense_pool(c, ns.features[HIDDEN_STATE], "mean"), atol=1e-6, rtol=0)
    assert time.perf_counter() - start < 10.0


# 2. GCN against the normalized-adjacency oracle -----------------------------

def test_2_gcn_matches_dense_oracle():
    for i in range(100):
        rng = np.random.default_rng(20_000 + i)
        g = random_homogeneous_graph(rng, max_nodes=16, dim=5)
        params = f64_params(i)
        out = value_of(GCNConv("gcn", 4)(Tape(params), g, "e"))
        adj = g.edge_sets["e"].adjacency
        want = dense_gcn(np.asarray(g.node_sets["v"].features[HIDDEN_STATE]), adj.source, adj.target,
                         params["gcn/kernel"])
        np.testing.assert_allclose(out, want, atol=1e-5, rtol=0)


# 3. Finite-difference gradient suite ------------------------------------------

def _read(state):
    """A fixed, non-symmetric scalar read-out of a state tensor."""
    shape = value_of(state).shape
    return ops.reduce_sum(ops.mul(state, np.sin(np.arange(int(np.prod(shape))) + 0.5).reshape(shape)))


def _first_edge_set(g):
    return sorted(g.edge_sets)[0]


def _mpnn(g):
    e = _first_edge_set(g)
    return lambda tape: _read(VanillaMPNNConv("m", 4)(tape, g, e))


def _gcn(g):
    return lambda tape: _read(GCNConv("g", 3, activation="tanh")(tape, g, "e"))


def _rgcn(g):
    target = g.edge_sets[_first_edge_set(g)].adjacency.target_set
    convs = {e: SAGEMeanConv(f"r/{e}", 3) for e in sorted(g.edge_sets) if g.edge_sets[e].adjacency.target_set == target}
    update = NodeSetUpdate(convs, RGCNNextState("r/next", 3, activation="tanh"))
    return lambda tape: _read(update(tape, g, target))


def _sage(g):
    e = _first_edge_set(g)
    return lambda tape: _read(SAGEMeanConv("s", 3)(tape, g, e))


def _gatv2(g):
    e = _first_edge_set(g)
    conv = GATv2Conv("a", 2, 2, sender_edge_feature=HIDDEN_STATE)
    return lambda tape: _read(conv(tape, g, e))


def _layer_norm(g):
    e = _first_edge_set(g)
    target = g.edge_sets[e].adjacency.target_set
    update = NodeSetUpdate({e: SAGEMeanConv("s", 3)}, NextStateFromConcat("n", 4, use_layer_norm=True))
    return lambda tape: _read(update(tape, g, target))


def _head(task):
    def make(g):
        name = sorted(g.node_sets)[0]
        comps = g.num_components
        labels = np.arange(comps) % task.num_logits if task.kind == "root_multiclass" else np.arange(comps) % 2
        mask = np.arange(comps) != comps - 1 if comps > 1 else np.ones(1, bool)

        def build(tape):
            readout = readout_root(g, name)
            loss, _ = compute_task_loss(task, task.head(tape, readout), labels, mask)
            return loss
        return build
    return make


GRADIENT_CASES = {
    "vanilla_mpnn": (_mpnn, False), "gcn": (_gcn, True), "rgcn_next_state": (_rgcn, False),
    "sage": (_sage, False), "gatv2": (_gatv2, False), "layer_norm": (_layer_norm, False),
    "multiclass_head": (_head(root_multiclass("x", 3, "y")), False),
    "binary_head": (_head(root_binary("x", "y")), False),
}


def test_3_gradient_suite():
    start = time.perf_counter()
    worst = {}
    for kind, (make, homogeneous) in GRADIENT_CASES.items():
        for i in range(20):
            rng = np.random.default_rng(30_000 + i)
            if homogeneous:
                g = random_homogeneous_graph(rng, max_nodes=8, dim=3)
            else:
                g = random_hetero_graph(rng, max_nodes=6, num_components=3, allow_empty=False)
            err = fd_gradient_check(make(g), f64_params(i), max_entries=12)
            worst[kind] = max(worst.get(kind, 0.0), err)
    assert all(err <= 1e-4 for err in worst.values()), worst
    assert time.perf_counter() - start < 60.0


# 4. Batching and padding neutrality -----------------------------------------

@pytest.fixture(scope="module")
def small_run():
    data = make_two_community_dataset(num_papers=40, num_train=24, seed=1)
    model = {**MODEL, "architecture": {**MODEL["architecture"], "units": 8, "message_dim": 8}}
    result = run_training(data.train_graphs, data.schema, model, task_from_dict(TASK),
                          TrainerConfig(batch_size=8, epochs=2, lr=0.01, seed=1))
    return data, result.artifact


def test_4_batching_and_padding_neutrality(small_run):
    data, artifact = small_run
    graphs = data.held_out_graphs
    runs = [list(predict(artifact, graphs, data.schema, batch_size=k)) for k in (1, 4, len(graphs))]
    for other in runs[1:]:
        for a, b in zip(runs[0], other):
            np.testing.assert_allclose(a["logits"], b["logits"], atol=1e-5, rtol=0)

    task = task_from_dict(artifact.task_config)
    model = GNNModel(artifact.model_config)
    batch = merge_batch(graphs[:6])
    targets = SizeTargets(7, {n: ns.total_size + 3 for n, ns in batch.node_sets.items()},
                          {n: es.total_size + 2 for n, es in batch.edge_sets.items()})
    padded, mask = pad_to_total_sizes(batch, targets)
    t1, t2 = Tape(artifact.params), Tape(artifact.params)
    _, loss1, _ = forward_batch(model, task, t1, batch)
    _, loss2, _ = forward_batch(model, task, t2, padded, mask)
    assert abs(float(value_of(loss1)) - float(value_of(loss2))) <= 1e-6
    g1, g2 = t1.backward(loss1), t2.backward(loss2)
    assert set(g1) == set(g2)
    for name in g1:
        np.testing.assert_allclose(g1[name], g2[name], atol=1e-6, rtol=0)


# 5. Sampler exactness, uniformity and shard invariance -----------------------

def _sampler_program(schema, k):
    seed = SamplingSpecBuilder(schema).seed("a")
    s1 = seed.sample(k, "aa")
    s2 = s1.join([seed]).sample(k, "ab")
    s2.sample(k, "ba")
    seed.sample(k, "aa", direction="reverse")
    return seed.build()


def test_5_sampler():
    schema = schema_from_dict(SAMPLER_SCHEMA)
    for i in range(50):
        rng = np.random.default_rng(50_000 + i)
        nodes, edges = random_store_tables(rng, max_nodes=200)
        store = build_graph_store(schema, nodes, edges)
        spec = _sampler_program(schema, 10_000)
        ops_doc = [{"name": op.op_name, "edge_set": op.edge_set_name, "direction": op.direction,
                    "inputs": ["SEED" if n == spec.seed_op.op_name else n for n in op.input_op_names]}
                   for op in spec.sampling_ops]
        seeds = [r["#id"] for r in nodes["a"][:4]]
        for seed_id, g in zip(seeds, sample_subgraphs(store, spec, seeds, global_seed=i)):
            want_nodes, want_edges = bfs_sample(edges, SAMPLER_SCHEMA["edge_sets"], ops_doc, "a", seed_id)
            assert validate_graph(schema, g) == []
            ids = {n: g.node_sets[n].features["#id"].tolist() for n in g.node_sets}
            assert ids["a"][0] == seed_id
            for n in ("a", "b"):
                assert sorted(ids[n]) == sorted(want_nodes.get(n, set()))
            for name, es in g.edge_sets.items():
                adj = es.adjacency
                got = [(ids[adj.source_set][s], ids[adj.target_set][t]) for s, t in zip(adj.source, adj.target)]
                assert len(got) == len(set(got)) and set(got) == want_edges.get(name, set())

    csr = build_csr(np.zeros(10, dtype=np.int64), np.arange(10), 1)
    counts = np.zeros(10)
    for t in range(10_000):
        counts[sample_edges(csr, [0], 3, global_seed=t, sample_id="p0", op_name="op")] += 1
    assert np.max(np.abs(counts / 10_000 - 0.3)) <= 0.02

    rng = np.random.default_rng(5)
    nodes, edges = random_store_tables(rng, max_nodes=200, max_degree=10)
    store = build_graph_store(schema, nodes, edges)
    spec = _sampler_program(schema, 3)
    seeds = [r["#id"] for r in nodes["a"]]
    streams = [b"".join(encode_graph(g, schema) for g in sample_subgraphs(store, spec, seeds, global_seed=7,
                                                                          num_shards=k))
               for k in (1, 4, 8)]
    assert streams[0] == streams[1] == streams[2]


# 6. End-to-end training on the two-community task ---------------------------

def _degree_features(data, ids):
    """Per paper: cited papers and topics counted per block."""
    feats = {p: np.zeros(4) for p in ids}
    for row in data.edge_tables["cites"]:
        if row["source_id"] in feats:
            feats[row["source_id"]][data.paper_block[int(row["target_id"][1:])]] += 1
    for row in data.edge_tables["has_topic"]:
        if row["source_id"] in feats:
            feats[row["source_id"]][2 + data.topic_block[int(row["target_id"][1:])]] += 1
    x = np.array([feats[p] for p in ids])
    y = np.array([data.paper_block[int(p[1:])] for p in ids])
    return x, y


def _logistic_accuracy(x_train, y_train, x_test, y_test):
    mu, sd = x_train.mean(0), x_train.std(0) + 1e-9
    a, b = (x_train - mu) / sd, (x_test - mu) / sd
    w, c = np.zeros(a.shape[1]), 0.0
    for _ in range(500):
        p = 1 / (1 + np.exp(-(a @ w + c)))
        w -= 0.5 * a.T @ (p - y_train) / len(y_train)
        c -= 0.5 * float(np.mean(p - y_train))
    return float(np.mean(((b @ w + c) > 0) == y_test))


def test_6_end_to_end_training():
    start = time.perf_counter()
    data = make_two_community_dataset(num_papers=200, num_train=160, seed=0)
    x_train, y_train = _degree_features(data, data.train_ids)
    x_test, y_test = _degree_features(data, data.held_out_ids)
    assert _logistic_accuracy(x_train, y_train, x_test, y_test) >= 0.9

    task = task_from_dict(TASK)
    assert MODEL["architecture"]["message_dim"] == 32 and MODEL["architecture"]["rounds"] == 2
    config = TrainerConfig(batch_size=16, epochs=20, lr=0.01, seed=0)
    first = run_training(data.train_graphs, data.schema, MODEL, task, config)
    assert len(first.history) <= 200
    train_metrics = evaluate(first.artifact, data.train_graphs, data.schema)
    held_metrics = evaluate(first.artifact, data.held_out_graphs, data.schema)
    assert train_metrics["accuracy"] >= 0.95, train_metrics
    assert held_metrics["accuracy"] >= 0.90, held_metrics
    second = run_training(data.train_graphs, data.schema, MODEL, task, config)
    assert second.history == first.history
    assert params_equal(second.artifact.params, first.artifact.params)
    assert time.perf_counter() - start < 120.0


# 7. Serialization round trips -----------------------------------------------

def test_7_serialization(small_run):
    schema = read_schema(DATA / "users_items_schema.json")
    for i in range(1000):
        g = random_users_items_graph(np.random.default_rng(70_000 + i))
        payload = encode_graph(g, schema)
        back = decode_graph(payload, schema)
        assert back.equals(g)
        assert encode_graph(back, schema) == payload
    _, artifact = small_run
    loaded = parse_artifact(dump_artifact(artifact))
    assert sorted(loaded.params) == sorted(artifact.params)
    for name in artifact.params:
        assert loaded.params[name].dtype == artifact.params[name].dtype
        assert loaded.params[name].tobytes() == artifact.params[name].tobytes()


# 8. Case-study sampling program -----------------------------------------------

def test_8_case_study_spec_strings():
    schema = read_schema(DATA / "mag_schema.json")
    seed_paper = SamplingSpecBuilder(schema, "RANDOM_UNIFORM").seed("paper")
    cited_papers = seed_paper.sample(32, "cites")
    authors = cited_papers.join([seed_paper]).sample(8, "writes", direction="reverse")
    author_papers = authors.sample(16, "writes")
    authors.sample(16, "affiliated_with")
    author_papers.join([seed_paper, cited_papers]).sample(16, "has_topic")
    spec = seed_paper.build()
    assert spec.seed_op.op_name == "SEED->paper" and spec.seed_op.node_set_name == "paper"
    assert [(op.op_name, list(op.input_op_names)) for op in spec.sampling_ops] == [
        ("paper->paper", ["SEED->paper"]),
        ("(paper->paper|SEED->paper)->author", ["paper->paper", "SEED->paper"]),
        ("author->institution", ["(paper->paper|SEED->paper)->author"]),
        ("author->paper", ["(paper->paper|SEED->paper)->author"]),
        ("(author->paper|SEED->paper|paper->paper)->field_of_study",
         ["author->paper", "SEED->paper", "paper->paper"]),
    ]
    assert [op.sample_size for op in spec.sampling_ops] == [32, 8, 16, 16, 16]
    assert all(op.strategy == "RANDOM_UNIFORM" for op in spec.sampling_ops)
