"""Training, evaluation and batch inference for root-node classification."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import queue
import threading
from typing import Callable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np

from hetgnn.core.optim import AdamState, adam_step, cosine_decay_lr
from hetgnn.core.rng import stream
from hetgnn.core.tape import Parameters, Tape, value_of
from hetgnn.graph_schema import GraphSchema, read_schema
from hetgnn.graph_tensor import FitError, GraphTensor, SizeTargets, merge_batch, pad_to_total_sizes
from hetgnn.io_format import DatasetReader, RecordError, decode_graph, read_records
from hetgnn.layers import GNNModel, l2_penalty, readout_root
from hetgnn.runner.artifact import ModelArtifact
from hetgnn.runner.tasks import RootNodeTask, compute_task_loss, predictions, task_from_dict

log = logging.getLogger(__name__)

# A dataset is a record file pattern or an in-memory sequence of graphs.
Dataset = Union[str, Sequence[GraphTensor]]
Processor = Callable[[GraphTensor], GraphTensor]

PREFETCH_DEPTH = 4


class TrainingError(RuntimeError):
    pass


@dataclasses.dataclass
class TrainerConfig:
    batch_size: int = 16
    epochs: int = 1
    steps_per_epoch: Optional[int] = None
    lr: float = 1e-3
    lr_floor: float = 0.0
    l2: float = 0.0
    seed: int = 0
    shuffle: bool = True
    padding: Optional[SizeTargets] = None
    prefetch: bool = False
    dtype: str = "float32"


@dataclasses.dataclass
class TrainResult:
    artifact: ModelArtifact
    history: list
    validation: list
    skipped_batches: int


def count_examples(data: Dataset) -> int:
    if isinstance(data, str):
        return sum(1 for _ in read_records(data))
    return len(data)


def iterate_batches(data: Dataset, schema: Optional[GraphSchema], batch_size: int,
                    shuffle_seed: Optional[int] = None) -> Iterator[GraphTensor]:
    """Merged batches in file (or list) order, or shuffled when a seed is given."""
    if isinstance(data, str):
        if schema is None:
            raise ValueError("reading records needs a schema")
        yield from DatasetReader(data, schema, batch_size, shuffle_seed)
        return
    order = np.arange(len(data))
    if shuffle_seed is not None:
        order = stream(shuffle_seed, "shuffle").permutation(len(data))
    for start in range(0, len(order), batch_size):
        yield merge_batch([data[i] for i in order[start:start + batch_size]])


def _prefetched(items: Iterator, depth: int = PREFETCH_DEPTH) -> Iterator:
    """Runs `items` on a producer thread behind a bounded queue."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()
    stop = threading.Event()

    def produce():
        try:
            for item in items:
                while not stop.is_set():
                    try:
                        q.put(("item", item), timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
            q.put(("done", done))
        except BaseException as e:  # forwarded to the consumer
            q.put(("error", e))

    thread = threading.Thread(target=produce, daemon=True)
    thread.start()
    try:
        while True:
            kind, value = q.get()
            if kind == "done":
                return
            if kind == "error":
                raise value
            yield value
    finally:
        stop.set()


def _epoch_seed(seed: int, epoch: int, restart: int) -> int:
    return int(stream(seed, "epoch", epoch, restart).integers(2 ** 62))


def forward_batch(model: GNNModel, task: RootNodeTask, tape: Tape, graph: GraphTensor,
                  mask: Optional[np.ndarray] = None, processors: Sequence[Processor] = ()):
    """Labels, model, root readout, head and masked loss for one batch."""
    graph, labels = task.extract_labels(graph)
    for processor in processors:
        graph = processor(graph)
    if mask is None:
        mask = np.ones(graph.num_components, dtype=bool)
    out = model(graph, tape)
    readout = readout_root(out, task.node_set, component_mask=mask)
    logits = task.head(tape, readout)
    loss, stats = compute_task_loss(task, logits, labels, mask)
    return logits, loss, stats


def _padded(graph: GraphTensor, targets: Optional[SizeTargets]):
    if targets is None:
        return graph, None
    return pad_to_total_sizes(graph, targets)


def run_training(train_data: Dataset, schema: GraphSchema, model_config: Mapping, task: RootNodeTask,
                 config: TrainerConfig, valid_data: Optional[Dataset] = None,
                 processors: Sequence[Processor] = (),
                 on_step: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Adam with cosine decay over `epochs`; every epoch reshuffles with a seed from (seed, epoch).

    Without steps_per_epoch an epoch is one pass over the data. Batches that
    do not fit the padding targets are skipped. A non-finite loss aborts.
    """
    if config.batch_size < 1 or config.epochs < 0:
        raise ValueError("batch_size must be >= 1 and epochs >= 0")
    num_examples = count_examples(train_data)
    if num_examples == 0:
        raise TrainingError("training data is empty")
    per_epoch = config.steps_per_epoch or math.ceil(num_examples / config.batch_size)
    total_steps = max(per_epoch * config.epochs, 1)
    model = GNNModel(model_config)
    params = Parameters(config.seed, config.dtype)
    state = AdamState()
    history, validation, skipped = [], [], 0
    step = 0

    def batches(epoch):
        restart = 0
        while True:
            seed = _epoch_seed(config.seed, epoch, restart) if config.shuffle else None
            yield from iterate_batches(train_data, schema, config.batch_size, seed)
            if config.steps_per_epoch is None:
                return
            restart += 1

    for epoch in range(config.epochs):
        source = batches(epoch)
        if config.prefetch:
            source = _prefetched(source)
        taken = 0
        for batch in source:
            if taken == per_epoch:
                break
            taken += 1
            try:
                batch, mask = _padded(batch, config.padding)
            except FitError as e:
                skipped += 1
                log.warning("skipping batch at step %d: %s", step, e)
                continue
            lr = cosine_decay_lr(step, total_steps, config.lr, config.lr_floor)
            tape = Tape(params, training=True, seed=config.seed, step=step)
            _, loss, stats = forward_batch(model, task, tape, batch, mask, processors)
            penalty = l2_penalty(tape, config.l2)
            total = loss if penalty is None else penalty + loss
            total_value = float(value_of(total))
            if not math.isfinite(total_value):
                raise TrainingError(f"non-finite loss {total_value} at step {step}")
            grads = tape.backward(total)
            adam_step(params, grads, state, lr)
            record = {"epoch": epoch, "step": step, "lr": lr, "loss": stats["loss"], "total_loss": total_value,
                      "accuracy": stats["accuracy"], "examples": stats["count"]}
            history.append(record)
            if on_step is not None:
                on_step(record)
            step += 1
        if valid_data is not None:
            partial = ModelArtifact(schema.fingerprint(), dict(model_config), task.to_dict(), params)
            metrics = evaluate(partial, valid_data, schema, config.batch_size, processors)
            validation.append({"epoch": epoch, **metrics})
            log.info("epoch %d validation: %s", epoch, metrics)
    artifact = ModelArtifact(schema.fingerprint(), json.loads(json.dumps(model_config)), task.to_dict(), params,
                             {"steps": step, "seed": config.seed})
    return TrainResult(artifact, history, validation, skipped)


def evaluate(artifact: ModelArtifact, data: Dataset, schema: GraphSchema, batch_size: int = 32,
             processors: Sequence[Processor] = ()) -> dict:
    """Mean loss and accuracy over every example; {"examples": 0, ...} for empty data."""
    artifact.check_schema(schema)
    model = GNNModel(artifact.model_config)
    task = task_from_dict(artifact.task_config)
    examples, correct, loss_sum = 0, 0, 0.0
    for batch in iterate_batches(data, schema, batch_size):
        tape = Tape(artifact.params, training=False)
        _, _, stats = forward_batch(model, task, tape, batch, None, processors)
        examples += stats["count"]
        correct += stats["correct"]
        loss_sum += stats["loss_sum"]
    if examples == 0:
        return {"examples": 0, "loss": None, "accuracy": None}
    return {"examples": examples, "loss": loss_sum / examples, "accuracy": correct / examples}


def _indexed_graphs(pattern: str, schema: GraphSchema) -> Iterator[tuple[int, GraphTensor]]:
    for index, (path, offset, payload) in enumerate(read_records(pattern)):
        try:
            yield index, decode_graph(payload, schema)
        except RecordError as e:
            raise type(e)(f"record {index} ({path}@{offset}): {e}") from None


def predict(artifact: ModelArtifact, data: Dataset, schema: GraphSchema, batch_size: int = 32,
            processors: Sequence[Processor] = ()) -> Iterator[dict]:
    """One prediction row per input graph, in input order."""
    artifact.check_schema(schema)
    model = GNNModel(artifact.model_config)
    task = task_from_dict(artifact.task_config)
    items = _indexed_graphs(data, schema) if isinstance(data, str) else enumerate(data)
    chunk: list = []

    def flush():
        graph = merge_batch([g for _, g in chunk])
        tape = Tape(artifact.params, training=False)
        graph, _ = _strip_labels(task, graph)
        for processor in processors:
            graph = processor(graph)
        readout = readout_root(model(graph, tape), task.node_set)
        logits = value_of(task.head(tape, readout))
        for (index, _), row in zip(chunk, predictions(task, logits)):
            yield {"record_index": index, **row}

    for item in items:
        chunk.append(item)
        if len(chunk) == batch_size:
            yield from flush()
            chunk = []
    if chunk:
        yield from flush()


def _strip_labels(task: RootNodeTask, graph: GraphTensor):
    # Inference data may or may not carry labels.
    features = graph.context.features if task.label_source == "context" else graph.node_sets[task.node_set].features
    if task.label_feature in features:
        return task.extract_labels(graph)
    return graph, None


def infer(artifact: ModelArtifact, pattern: str, schema: GraphSchema, out_path: str,
          batch_size: int = 32) -> int:
    """Writes NDJSON predictions after a '#' header line; returns the row count."""
    task = task_from_dict(artifact.task_config)
    fields = ["record_index", "predicted_class"] + (["probability"] if task.kind == "root_binary" else []) + ["logits"]
    count = 0
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(f"# hetgnn predictions task={task.kind} node_set={task.node_set} fields={','.join(fields)}\n")
        for row in predict(artifact, pattern, schema, batch_size):
            f.write(json.dumps(row, sort_keys=True) + "\n")
            count += 1
    return count


# Training config files -------------------------------------------------------

@dataclasses.dataclass
class TrainingJob:
    schema: GraphSchema
    train_records: str
    valid_records: Optional[str]
    model_config: dict
    task: RootNodeTask
    trainer: TrainerConfig


def _resolve(base: str, path: Optional[str]) -> Optional[str]:
    if path is None or os.path.isabs(path):
        return path
    return os.path.join(base, path)


def job_from_config(doc: Mapping, base_dir: str = ".") -> TrainingJob:
    """Builds a job from a training config; relative paths resolve against base_dir."""
    missing = [k for k in ("schema", "train_records", "model", "task") if k not in doc]
    if missing:
        raise ValueError(f"training config lacks {missing}")
    schema = read_schema(_resolve(base_dir, doc["schema"]))
    model = doc["model"]
    if isinstance(model, str):
        with open(_resolve(base_dir, model), encoding="utf-8") as f:
            model = json.load(f)
    padding = None
    if doc.get("padding"):
        p = doc["padding"]
        padding = SizeTargets(int(p["num_components"]), dict(p.get("node_sets", {})), dict(p.get("edge_sets", {})))
    known = {f.name for f in dataclasses.fields(TrainerConfig)} - {"padding"}
    trainer = TrainerConfig(**{k: doc[k] for k in known if k in doc}, padding=padding)
    return TrainingJob(schema, _resolve(base_dir, doc["train_records"]), _resolve(base_dir, doc.get("valid_records")),
                       model, task_from_dict(doc["task"]), trainer)


def load_training_config(path: str) -> TrainingJob:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: parse error at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return job_from_config(doc, os.path.dirname(os.path.abspath(path)))
