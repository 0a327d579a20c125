import pathlib

import numpy as np
import pytest

from hetgnn import graph_schema
from hetgnn.graph_tensor import (Adjacency, Context, EdgeSet, NodeSet, RaggedFeature,
                                 build_graph_tensor)

DATA = pathlib.Path(__file__).parent / "data"

PRICES = [[22.34, 23.42, 12.99], [27.99, 34.50], [89.99], [24.99, 45.00], [350.00],
          [45.13, 79.80, 12.35]]


def make_users_items_graph(country=(3, 2, 1, 0), age=(24, 32, 27, 38)):
    return build_graph_tensor(
        context=Context.from_fields({"scores": [[0.45, 0.98, 0.10, 0.25]]}),
        node_sets={
            "items": NodeSet.from_fields(
                sizes=[6],
                features={
                    "category": ["food", "show ticket", "shoes", "book", "flight", "groceries"],
                    "price": RaggedFeature.from_rows(PRICES, dtype=np.float32),
                }),
            "users": NodeSet.from_fields(
                sizes=[4],
                features={
                    "name": ["Shawn", "Jeorg", "Yumiko", "Sophie"],
                    "age": list(age),
                    "country": list(country),
                }),
        },
        edge_sets={
            "purchased": EdgeSet.from_fields(
                sizes=[7],
                adjacency=Adjacency.from_indices(("items", [0, 1, 2, 3, 4, 5, 5]),
                                                 ("users", [1, 1, 0, 0, 2, 3, 0]))),
            "is-friend": EdgeSet.from_fields(
                sizes=[3],
                adjacency=Adjacency.from_indices(("users", [1, 2, 3]), ("users", [0, 0, 0]))),
        })


@pytest.fixture
def users_items_schema():
    return graph_schema.read_schema(DATA / "users_items_schema.json")


@pytest.fixture
def users_items_graph():
    return make_users_items_graph()
