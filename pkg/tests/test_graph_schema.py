import json
from types import MappingProxyType

import numpy as np
import pytest

from conftest import DATA, make_users_items_graph
from hetgnn.graph_schema import (SchemaError, parse_schema, read_schema, schema_fingerprint, schema_from_dict,
                                 schema_to_dict, serialize_schema, validate_graph)
from hetgnn.graph_tensor import Adjacency, EdgeSet, GraphTensor, replace_features


def test_users_items_schema_shape(users_items_schema):
    assert len(users_items_schema.node_sets) == 2
    assert len(users_items_schema.edge_sets) == 2
    assert list(users_items_schema.context) == ["scores"]
    price = users_items_schema.node_sets["items"].features["price"]
    assert price.is_ragged and price.dtype == "float32"
    assert users_items_schema.edge_sets["purchased"].source == "items"


def test_empty_document_rejected():
    with pytest.raises(SchemaError, match="no node sets"):
        parse_schema("")
    with pytest.raises(SchemaError, match="no node sets"):
        parse_schema("{}")


def test_unknown_endpoint_named():
    doc = {"node_sets": {"a": {"features": {}}}, "edge_sets": {"e": {"source": "a", "target": "ghost"}}}
    with pytest.raises(SchemaError, match="ghost"):
        schema_from_dict(doc)


@pytest.mark.parametrize("feature", [
    {"dtype": "float64", "shape": []},
    {"dtype": "float32", "shape": [2, -1]},
    {"dtype": "float32", "shape": [-1, -1]},
    {"dtype": "float32", "shape": "3"},
    {"dtype": "string", "shape": [2, 2]},
    {"dtype": "int64", "shape": [], "units": "m"},
])
def test_bad_features_rejected(feature):
    with pytest.raises(SchemaError):
        schema_from_dict({"node_sets": {"a": {"features": {"f": feature}}}})


def test_parse_errors_report_position():
    with pytest.raises(SchemaError, match="line 1"):
        parse_schema('{"node_sets": ')
    with pytest.raises(SchemaError, match="duplicate"):
        parse_schema('{"node_sets": {"a": {}, "a": {}}}')
    with pytest.raises(SchemaError, match="unknown top-level"):
        parse_schema('{"node_sets": {"a": {}}, "extra": 1}')


def test_serialization_round_trip_and_fingerprint(users_items_schema):
    text = serialize_schema(users_items_schema)
    again = parse_schema(text)
    assert serialize_schema(again) == text
    assert schema_fingerprint(again) == schema_fingerprint(users_items_schema)
    doc = schema_to_dict(users_items_schema)
    doc["node_sets"]["users"]["features"]["age"]["dtype"] = "float32"
    assert schema_fingerprint(schema_from_dict(doc)) != schema_fingerprint(users_items_schema)


def test_fingerprint_ignores_key_order():
    raw = json.loads((DATA / "users_items_schema.json").read_text())
    reordered = {"context": raw["context"], "edge_sets": dict(reversed(list(raw["edge_sets"].items()))),
                 "node_sets": raw["node_sets"]}
    assert schema_fingerprint(schema_from_dict(reordered)) == schema_fingerprint(read_schema(
        DATA / "users_items_schema.json"))


def test_example_graph_conforms(users_items_schema, users_items_graph):
    assert validate_graph(users_items_schema, users_items_graph) == []


def test_float_age_is_dtype_mismatch(users_items_schema, users_items_graph):
    g = replace_features(users_items_graph, node_sets={"users": {"age": np.array([24., 32., 27., 38.])}})
    violations = validate_graph(users_items_schema, g)
    assert any("dtype mismatch users.age" in v for v in violations)


def test_out_of_range_index_reported(users_items_schema, users_items_graph):
    # Bypass construction checks to hand validation a broken graph.
    friend = users_items_graph.edge_sets["is-friend"]
    broken = EdgeSet(friend.sizes, Adjacency("users", np.array([1, 2, 6]), "users", np.array([0, 0, 0])),
                     friend.features)
    edges = dict(users_items_graph.edge_sets, **{"is-friend": broken})
    g = GraphTensor(users_items_graph.context, users_items_graph.node_sets, MappingProxyType(edges), 1)
    assert any("index out of range" in v for v in validate_graph(users_items_schema, g))


def test_missing_and_unknown_features(users_items_schema, users_items_graph):
    g = replace_features(users_items_graph, node_sets={"users": {"height": np.ones(4)}},
                         remove={"users": ["country"]})
    violations = validate_graph(users_items_schema, g)
    assert "missing feature users.country" in violations
    assert "unknown feature users.height" in violations
    assert validate_graph(users_items_schema, g, allow_extra_features={"height", "country"}) != []


def test_ragged_shape_enforced(users_items_schema):
    g = make_users_items_graph()
    dense_price = replace_features(g, node_sets={"items": {"price": np.ones((6, 1), dtype=np.float32)}})
    assert any("ragged" in v for v in validate_graph(users_items_schema, dense_price))
