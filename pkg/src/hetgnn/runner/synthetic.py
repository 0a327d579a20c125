"""A small two-community heterogeneous dataset for end-to-end checks.

Papers and topics are split into two blocks; a paper's class is its block.
Every citation and topic edge stays inside the paper's block with
probability p_in, so the class is only visible through the graph.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from hetgnn.core.rng import stream
from hetgnn.graph_schema import GraphSchema, schema_from_dict, serialize_schema
from hetgnn.graph_tensor import GraphTensor
from hetgnn.sampler import GraphStore, SamplingSpec, SamplingSpecBuilder, build_graph_store, sample_subgraphs

SCHEMA = {
    "node_sets": {
        "paper": {"features": {"feat": {"dtype": "float32", "shape": [4]},
                               "label": {"dtype": "int64", "shape": []}}},
        "topic": {"features": {"#id": {"dtype": "string", "shape": []}}},
    },
    "edge_sets": {
        "cites": {"source": "paper", "target": "paper", "features": {}},
        "has_topic": {"source": "paper", "target": "topic", "features": {}},
    },
}

MODEL = {
    "feature_map": {
        "paper": [{"feature": "feat", "steps": [{"op": "dense", "units": 16, "activation": "relu"}]}],
        "topic": [{"feature": "#id", "steps": [{"op": "hash_bucket", "buckets": 1024},
                                               {"op": "embed", "vocab": 1024, "dim": 16}]}],
    },
    "architecture": {"type": "vanilla_mpnn", "rounds": 2, "units": 32, "message_dim": 32,
                     "receiver_tag": "source", "reduce_type": "mean", "node_sets": {"paper": ["cites", "has_topic"]}},
}

TASK = {"type": "root_multiclass", "node_set": "paper", "num_classes": 2, "label_feature": "label",
        "label_source": "node"}


@dataclasses.dataclass
class SyntheticDataset:
    schema: GraphSchema
    store: GraphStore
    spec: SamplingSpec
    node_tables: dict
    edge_tables: dict
    paper_block: np.ndarray
    topic_block: np.ndarray
    train_ids: list
    held_out_ids: list
    train_graphs: list
    held_out_graphs: list


def _pick(gen, block: int, blocks: np.ndarray, p_in: float, exclude: int = -1) -> int:
    same = gen.random() < p_in
    want = block if same else 1 - block
    pool = np.nonzero(blocks == want)[0]
    if exclude >= 0:
        pool = pool[pool != exclude]
    return int(pool[gen.integers(pool.size)])


def two_community_tables(num_papers: int = 200, num_topics: int = 20, cites_per_paper: int = 4,
                         topics_per_paper: int = 4, p_in: float = 0.9, seed: int = 0):
    """Node and edge rows plus block assignments (block of item i is i % 2)."""
    gen = stream(seed, "two_community")
    paper_block = np.arange(num_papers) % 2
    topic_block = np.arange(num_topics) % 2
    papers = [{"#id": f"p{i}", "feat": gen.normal(size=4).round(4).tolist(), "label": int(paper_block[i])}
              for i in range(num_papers)]
    topics = [{"#id": f"t{j}"} for j in range(num_topics)]
    cites, has_topic = [], []
    for i in range(num_papers):
        b = int(paper_block[i])
        for _ in range(cites_per_paper):
            cites.append({"source_id": f"p{i}", "target_id": f"p{_pick(gen, b, paper_block, p_in, exclude=i)}"})
        for _ in range(topics_per_paper):
            has_topic.append({"source_id": f"p{i}", "target_id": f"t{_pick(gen, b, topic_block, p_in)}"})
    return {"paper": papers, "topic": topics}, {"cites": cites, "has_topic": has_topic}, paper_block, topic_block


def two_community_spec(schema: GraphSchema, sample_size: int = 8) -> SamplingSpec:
    builder = SamplingSpecBuilder(schema)
    seed = builder.seed("paper")
    cited = seed.sample(sample_size, "cites")
    seed.join([cited]).sample(sample_size, "has_topic")
    return builder.build()


def make_two_community_dataset(num_papers: int = 200, num_train: int = 160, seed: int = 0,
                               p_in: float = 0.9) -> SyntheticDataset:
    schema = schema_from_dict(SCHEMA)
    node_tables, edge_tables, paper_block, topic_block = two_community_tables(num_papers, p_in=p_in, seed=seed)
    store = build_graph_store(schema, node_tables, edge_tables)
    spec = two_community_spec(schema)
    order = stream(seed, "split").permutation(num_papers)
    train_ids = [f"p{i}" for i in order[:num_train]]
    held_ids = [f"p{i}" for i in order[num_train:]]
    train: list[GraphTensor] = list(sample_subgraphs(store, spec, train_ids, global_seed=seed))
    held: list[GraphTensor] = list(sample_subgraphs(store, spec, held_ids, global_seed=seed))
    return SyntheticDataset(schema, store, spec, node_tables, edge_tables, paper_block, topic_block,
                            train_ids, held_ids, train, held)


def write_two_community_files(directory: str, num_papers: int = 200, num_train: int = 160, seed: int = 0) -> dict:
    """Writes schema, NDJSON tables, sampling spec, seed lists and a training config; returns their paths."""
    ds = make_two_community_dataset(num_papers, num_train, seed)
    os.makedirs(directory, exist_ok=True)
    paths = {name: os.path.join(directory, name) for name in (
        "schema.json", "paper.ndjson", "topic.ndjson", "cites.ndjson", "has_topic.ndjson", "spec.json",
        "train_seeds.txt", "held_out_seeds.txt", "train_config.json")}
    with open(paths["schema.json"], "w", encoding="utf-8") as f:
        f.write(serialize_schema(ds.schema))
    for name, rows in {**ds.node_tables, **ds.edge_tables}.items():
        with open(paths[f"{name}.ndjson"], "w", encoding="utf-8") as f:
            f.writelines(json.dumps(row, sort_keys=True) + "\n" for row in rows)
    with open(paths["spec.json"], "w", encoding="utf-8") as f:
        f.write(ds.spec.to_json())
    for key, ids in (("train_seeds.txt", ds.train_ids), ("held_out_seeds.txt", ds.held_out_ids)):
        with open(paths[key], "w", encoding="utf-8") as f:
            f.writelines(i + "\n" for i in ids)
    config = {"schema": "schema.json", "train_records": "train.gtr", "valid_records": "held_out.gtr",
              "model": MODEL, "task": TASK, "batch_size": 16, "epochs": 20, "lr": 0.01, "l2": 0.0, "seed": seed}
    with open(paths["train_config.json"], "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2, sort_keys=True)
    return paths
