import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetgnn.graph_tensor import (Adjacency, Context, EdgeSet, FitError, GraphTensorError, NodeSet, RaggedFeature,
                                 SizeTargets, build_graph_tensor, get_component, merge_batch, pad_to_total_sizes,
                                 replace_features)
from oracles import random_hetero_graph


def _tiny(n_nodes, src, tgt):
    return build_graph_tensor(
        node_sets={"v": NodeSet.from_fields([n_nodes], {"x": np.arange(n_nodes, dtype=np.float32)})},
        edge_sets={"e": EdgeSet.from_fields([len(src)], Adjacency("v", np.array(src), "v", np.array(tgt)))})


def test_example_graph_structure(users_items_graph):
    g = users_items_graph
    assert g.num_components == 1
    assert g.node_sets["items"].total_size == 6 and g.node_sets["users"].total_size == 4
    np.testing.assert_array_equal(g.edge_sets["purchased"].adjacency.source, [0, 1, 2, 3, 4, 5, 5])
    np.testing.assert_array_equal(g.edge_sets["purchased"].adjacency.target, [1, 1, 0, 0, 2, 3, 0])
    np.testing.assert_allclose(g.context.features["scores"], [[0.45, 0.98, 0.10, 0.25]], rtol=1e-6)
    np.testing.assert_array_equal(g.node_sets["items"].features["price"].row_lengths, [3, 2, 1, 2, 1, 3])


def test_empty_edge_set_is_valid():
    g = _tiny(2, [], [])
    assert g.edge_sets["e"].total_size == 0


def test_out_of_range_target_rejected(users_items_graph):
    with pytest.raises(GraphTensorError, match="out of range"):
        build_graph_tensor(users_items_graph.context, users_items_graph.node_sets, {
            "purchased": EdgeSet.from_fields([7], Adjacency.from_indices(
                ("items", [0, 1, 2, 3, 4, 5, 5]), ("users", [1, 1, 0, 0, 2, 3, 9])))})


def test_structure_errors():
    with pytest.raises(GraphTensorError, match="size mismatch"):
        build_graph_tensor(node_sets={"v": NodeSet.from_fields([3], {"x": np.ones(2)})})
    with pytest.raises(GraphTensorError, match="components"):
        build_graph_tensor(node_sets={"a": NodeSet.from_fields([1, 1]), "b": NodeSet.from_fields([1])})
    with pytest.raises(GraphTensorError, match="crossing"):
        build_graph_tensor(node_sets={"v": NodeSet.from_fields([1, 1])},
                           edge_sets={"e": EdgeSet.from_fields([1, 0], Adjacency("v", [0], "v", [1]))})


def test_merge_self_loops():
    g = _tiny(1, [0], [0])
    m = merge_batch([g, g])
    np.testing.assert_array_equal(m.node_sets["v"].sizes, [1, 1])
    np.testing.assert_array_equal(m.edge_sets["e"].adjacency.source, [0, 1])
    np.testing.assert_array_equal(m.edge_sets["e"].adjacency.target, [0, 1])


def test_merge_offsets():
    m = merge_batch([_tiny(3, [], []), _tiny(2, [1], [0])])
    np.testing.assert_array_equal(m.edge_sets["e"].adjacency.source, [4])
    np.testing.assert_array_equal(m.edge_sets["e"].adjacency.target, [3])
    np.testing.assert_array_equal(m.component_offsets("v"), [0, 3])


def test_merge_single_is_identity(users_items_graph):
    assert merge_batch([users_items_graph]).equals(users_items_graph)


def test_merge_incompatible():
    a = _tiny(1, [], [])
    b = replace_features(a, node_sets={"v": {"x": np.zeros(1, dtype=np.int64)}})
    with pytest.raises(GraphTensorError, match="incompatible"):
        merge_batch([a, b])


def test_latest_price_from_ragged(users_items_graph):
    price = users_items_graph.node_sets["items"].features["price"]
    latest = np.asarray(price.first(1).flat).reshape(-1, 1)
    g = replace_features(users_items_graph, node_sets={"items": {"latest_price": latest}})
    np.testing.assert_allclose(g.node_sets["items"].features["latest_price"],
                               [[22.34], [27.99], [89.99], [24.99], [350.00], [45.13]], rtol=1e-6)
    assert g.node_sets["items"].features["latest_price"].shape == (6, 1)


def test_replace_identical_and_wrong_length(users_items_graph):
    same = replace_features(users_items_graph,
                            node_sets={"users": {"age": users_items_graph.node_sets["users"].features["age"]}})
    assert same.equals(users_items_graph)
    with pytest.raises(GraphTensorError):
        replace_features(users_items_graph, node_sets={"items": {"x": np.ones(5)}})


def test_ragged_helpers():
    r = RaggedFeature.from_rows([[1.0, 3.0], [5.0], []], dtype=np.float64)
    np.testing.assert_allclose(r.row_means(np.float64), [2.0, 5.0, 0.0])
    assert r.take([2, 0]).rows()[1].tolist() == [1.0, 3.0]
    with pytest.raises(GraphTensorError):
        RaggedFeature(np.array([2]), np.ones(3))


def test_pad_example():
    g = build_graph_tensor(node_sets={"users": NodeSet.from_fields([4], {"age": np.arange(4)})},
                           edge_sets={"f": EdgeSet.from_fields([1], Adjacency("users", [1], "users", [0]))})
    padded, mask = pad_to_total_sizes(g, SizeTargets(2, {"users": 6}, {"f": 1}))
    np.testing.assert_array_equal(padded.node_sets["users"].sizes, [4, 2])
    np.testing.assert_array_equal(padded.node_sets["users"].features["age"], [0, 1, 2, 3, 0, 0])
    np.testing.assert_array_equal(mask, [True, False])


def test_pad_noop_and_fit_errors(users_items_graph):
    same, mask = pad_to_total_sizes(users_items_graph, SizeTargets(1, {"items": 6, "users": 4}))
    assert same.equals(users_items_graph) and mask.tolist() == [True]
    with pytest.raises(FitError):
        pad_to_total_sizes(users_items_graph, SizeTargets(2, {"items": 5, "users": 4}))
    with pytest.raises(FitError):
        pad_to_total_sizes(users_items_graph, SizeTargets(1, {"items": 7, "users": 4}))
    with pytest.raises(FitError):
        pad_to_total_sizes(users_items_graph, SizeTargets(2, {"items": 6, "users": 4}, {"purchased": 9}))


def test_context_only_graph():
    g = build_graph_tensor(Context.from_fields({"c": [[1.0], [2.0]]}))
    assert g.num_components == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 4))
def test_merge_then_split_round_trips(seed, k):
    rng = np.random.default_rng(seed)
    graphs = [random_hetero_graph(np.random.default_rng(seed), max_nodes=5) for _ in range(k)]
    # Same structure seed, different feature values.
    graphs = [replace_features(g, context={"hidden_state": rng.normal(size=(1, 3))}) for g in graphs]
    merged = merge_batch(graphs)
    assert merged.num_components == k
    for i, g in enumerate(graphs):
        assert get_component(merged, i).equals(g)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_padding_then_component_extraction(seed):
    g = random_hetero_graph(np.random.default_rng(seed), max_nodes=6)
    targets = SizeTargets(2, {n: ns.total_size + 1 for n, ns in g.node_sets.items()},
                          {n: es.total_size + 1 for n, es in g.edge_sets.items()})
    padded, mask = pad_to_total_sizes(g, targets)
    assert mask.tolist() == [True, False]
    assert get_component(padded, 0).equals(g)
    for name, es in padded.edge_sets.items():
        assert es.total_size == g.edge_sets[name].total_size + 1
