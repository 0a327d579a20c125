"""Root-node classification tasks: label extraction, head, masked loss."""

from __future__ import annotations

import dataclasses
from typing import Mapping

import numpy as np

from hetgnn.core import ops
from hetgnn.core.tape import Tape, value_of
from hetgnn.graph_tensor import CONTEXT, GraphTensor, RaggedFeature, replace_features
from hetgnn.layers.base import Dense


class TaskError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class RootNodeTask:
    """Classifies the root node (local index 0) of `node_set` in every component.

    Labels come from a context feature (label_source="context") or from a
    feature of the root node (label_source="node"). They are removed from the
    graph before the model sees it.
    """

    kind: str
    node_set: str
    label_feature: str
    num_classes: int = 2
    label_source: str = "context"

    def __post_init__(self):
        if self.kind not in ("root_multiclass", "root_binary"):
            raise TaskError(f"unknown task kind {self.kind!r}")
        if self.kind == "root_multiclass" and self.num_classes < 2:
            raise TaskError("multiclass tasks need num_classes >= 2")
        if self.label_source not in ("context", "node"):
            raise TaskError(f"label_source must be 'context' or 'node', got {self.label_source!r}")

    @property
    def num_logits(self) -> int:
        return 1 if self.kind == "root_binary" else self.num_classes

    def to_dict(self) -> dict:
        return {"type": self.kind, "node_set": self.node_set, "label_feature": self.label_feature,
                "num_classes": self.num_classes, "label_source": self.label_source}

    def extract_labels(self, graph: GraphTensor) -> tuple[GraphTensor, np.ndarray]:
        """Returns (graph without the label feature, int64 labels per component)."""
        if self.label_source == "context":
            features, key = graph.context.features, CONTEXT
        else:
            if self.node_set not in graph.node_sets:
                raise TaskError(f"graph has no node set {self.node_set!r}")
            features, key = graph.node_sets[self.node_set].features, self.node_set
        if self.label_feature not in features:
            raise TaskError(f"label feature {key}.{self.label_feature} not found")
        raw = features[self.label_feature]
        if isinstance(raw, RaggedFeature):
            raise TaskError("labels cannot be ragged")
        raw = np.asarray(value_of(raw))
        column = raw.reshape(raw.shape[0], -1)[:, 0] if raw.size else np.zeros(raw.shape[0])
        if self.label_source == "context":
            labels = column
        else:
            sizes = graph.node_sets[self.node_set].sizes
            offsets = graph.component_offsets(self.node_set)
            labels = np.where(sizes > 0, column[np.minimum(offsets, max(column.shape[0] - 1, 0))]
                              if column.size else 0, 0)
        stripped = replace_features(graph, remove={key: [self.label_feature]})
        return stripped, np.asarray(labels).astype(np.int64)

    def head(self, tape: Tape, readout):
        return Dense("head/logits", self.num_logits)(tape, readout)


def compute_task_loss(task: RootNodeTask, logits, labels, component_mask) -> tuple[object, dict]:
    """Mean loss over mask-true components, plus accuracy and raw sums.

    With no mask-true component the loss is the constant 0 and accuracy is None.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    mask = np.asarray(component_mask, dtype=bool).reshape(-1)
    lv = value_of(logits)
    if labels.shape[0] != lv.shape[0] or mask.shape[0] != lv.shape[0]:
        raise TaskError(f"{labels.shape[0]} labels and {mask.shape[0]} mask entries for {lv.shape[0]} logit rows")
    count = int(mask.sum())
    limit = task.num_classes if task.kind == "root_multiclass" else 2
    bad = mask & ((labels < 0) | (labels >= limit))
    if np.any(bad):
        raise TaskError(f"label {int(labels[bad][0])} out of range [0, {limit})")
    safe = np.where(mask, labels, 0)
    weights = mask.astype(np.float64)
    if task.kind == "root_multiclass":
        loss_sum = ops.softmax_cross_entropy(logits, safe, weights)
        predicted = np.argmax(lv, axis=1)
    else:
        loss_sum = ops.sigmoid_cross_entropy(logits, safe, weights)
        predicted = (lv.reshape(-1) > 0).astype(np.int64)
    correct = int(((predicted == safe) & mask).sum())
    stats = {"count": count, "correct": correct, "loss_sum": float(value_of(loss_sum))}
    if count == 0:
        return np.asarray(0.0, dtype=lv.dtype), {**stats, "loss": 0.0, "accuracy": None}
    loss = ops.mul(loss_sum, np.asarray(1.0 / count, dtype=lv.dtype))
    return loss, {**stats, "loss": float(value_of(loss)), "accuracy": correct / count}


def task_from_dict(doc: Mapping) -> RootNodeTask:
    try:
        return RootNodeTask(kind=doc["type"], node_set=doc["node_set"], label_feature=doc["label_feature"],
                            num_classes=int(doc.get("num_classes", 2)),
                            label_source=doc.get("label_source", "context"))
    except KeyError as e:
        raise TaskError(f"task config lacks {e.args[0]!r}") from None


def root_multiclass(node_set: str, num_classes: int, label_feature: str,
                    label_source: str = "context") -> RootNodeTask:
    return RootNodeTask("root_multiclass", node_set, label_feature, num_classes, label_source)


def root_binary(node_set: str, label_feature: str, label_source: str = "context") -> RootNodeTask:
    return RootNodeTask("root_binary", node_set, label_feature, 2, label_source)


def predictions(task: RootNodeTask, logits: np.ndarray) -> list[dict]:
    out = []
    for row in np.asarray(logits, dtype=np.float64):
        if task.kind == "root_multiclass":
            out.append({"predicted_class": int(np.argmax(row)), "logits": [float(x) for x in row]})
        else:
            prob = float(1.0 / (1.0 + np.exp(-row[0])))
            out.append({"predicted_class": int(row[0] > 0), "probability": prob, "logits": [float(row[0])]})
    return out
