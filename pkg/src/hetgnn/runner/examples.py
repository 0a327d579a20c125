"""Example configuration for a paper-venue model on the MAG-style schema.

The widths and regularization are the reported best values for the full
dataset. They are starting points for that scale, not verified optima here.
"""

MAG_EXAMPLE_MODEL = {
    "feature_map": {
        "paper": [{"feature": "feat", "steps": [{"op": "dense", "units": 256, "activation": "relu"}]}],
        "author": [{"feature": "#id", "steps": [{"op": "hash_bucket", "buckets": 100_000},
                                                {"op": "embed", "vocab": 100_000, "dim": 32}]}],
        "institution": [{"feature": "#id", "steps": [{"op": "hash_bucket", "buckets": 10_000},
                                                     {"op": "embed", "vocab": 10_000, "dim": 16}]}],
        "field_of_study": [{"feature": "#id", "steps": [{"op": "hash_bucket", "buckets": 100_000},
                                                        {"op": "embed", "vocab": 100_000, "dim": 32}]}],
    },
    "architecture": {
        "type": "vanilla_mpnn", "rounds": 4, "units": 256, "message_dim": 256, "receiver_tag": "source",
        "reduce_type": "sum", "dropout": 0.2, "layer_norm": True,
        "node_sets": {"paper": ["cites", "has_topic"], "author": ["writes", "affiliated_with"]},
    },
}

MAG_EXAMPLE_TASK = {"type": "root_multiclass", "node_set": "paper", "num_classes": 349, "label_feature": "label",
                    "label_source": "node"}
