import json
import math

import numpy as np
import pytest

from hetgnn.core.tape import Parameters, Tape, value_of
from hetgnn.graph_schema import schema_from_dict
from hetgnn.graph_tensor import (Adjacency, EdgeSet, NodeSet, SizeTargets, build_graph_tensor, merge_batch,
                                 pad_to_total_sizes, replace_features)
from hetgnn.io_format import CorruptRecordError, encode_graph, write_records
from hetgnn.layers import GNNModel, expand_architecture
from hetgnn.runner import (ArtifactError, ModelArtifact, TaskError, TrainerConfig, TrainingError, compute_task_loss,
                           dump_artifact, evaluate, export_model, forward_batch, infer, job_from_config,
                           load_model, load_training_config, make_two_community_dataset, params_equal,
                           parse_artifact, predict, root_binary, root_multiclass, run_training,
                           write_two_community_files)
from hetgnn.runner.examples import MAG_EXAMPLE_MODEL, MAG_EXAMPLE_TASK
from hetgnn.runner.synthetic import MODEL, TASK
from hetgnn.runner.tasks import task_from_dict

SMALL_MODEL = {**MODEL, "architecture": {**MODEL["architecture"], "units": 8, "message_dim": 8}}


@pytest.fixture(scope="module")
def data():
    return make_two_community_dataset(num_papers=48, num_train=32, seed=0)


@pytest.fixture(scope="module")
def task():
    return task_from_dict(TASK)


def _train(data, task, **kw):
    config = TrainerConfig(**{"batch_size": 8, "epochs": 1, "lr": 0.01, "seed": 0, **kw})
    return run_training(data.train_graphs, data.schema, SMALL_MODEL, task, config)


# Task loss ----------------------------------------------------------------

@pytest.mark.parametrize("classes", [2, 3, 7])
def test_uniform_logits_give_log_c(classes):
    task = root_multiclass("paper", classes, "y")
    loss, stats = compute_task_loss(task, np.zeros((4, classes)), [0, 1, 1, 0], np.ones(4, bool))
    assert float(value_of(loss)) == pytest.approx(math.log(classes))
    assert stats["count"] == 4


def test_binary_zero_logit_gives_log_two():
    loss, stats = compute_task_loss(root_binary("paper", "y"), np.zeros((2, 1)), [0, 1], np.ones(2, bool))
    assert float(value_of(loss)) == pytest.approx(math.log(2))
    assert stats["accuracy"] == 0.5


def test_all_false_mask():
    loss, stats = compute_task_loss(root_multiclass("p", 3, "y"), np.ones((2, 3)), [0, 1], np.zeros(2, bool))
    assert float(value_of(loss)) == 0.0 and stats["accuracy"] is None and stats["count"] == 0


def test_matching_logits_give_full_accuracy():
    logits = np.eye(3)[[2, 0, 1]] * 20
    _, stats = compute_task_loss(root_multiclass("p", 3, "y"), logits, [2, 0, 1], np.ones(3, bool))
    assert stats["accuracy"] == 1.0


def test_masked_components_are_ignored():
    logits = np.array([[5.0, 0.0], [0.0, 5.0]])
    _, stats = compute_task_loss(root_multiclass("p", 2, "y"), logits, [0, 99], np.array([True, False]))
    assert stats["accuracy"] == 1.0 and stats["count"] == 1


def test_label_out_of_range():
    with pytest.raises(TaskError, match="out of range"):
        compute_task_loss(root_multiclass("p", 2, "y"), np.zeros((1, 2)), [2], np.ones(1, bool))
    with pytest.raises(TaskError):
        root_multiclass("p", 1, "y")


def test_context_labels_are_extracted(users_items_graph):
    g = replace_features(users_items_graph, context={"y": np.array([1])})
    stripped, labels = root_binary("users", "y").extract_labels(g)
    assert labels.tolist() == [1] and "y" not in stripped.context.features


def test_label_feature_cannot_leak(data, task):
    model = GNNModel(SMALL_MODEL)
    batch = merge_batch(data.train_graphs[:6])
    labels = batch.node_sets["paper"].features["label"]
    scrambled = replace_features(batch, node_sets={"paper": {"label": (labels + 1) % 2}})
    a, _, _ = forward_batch(model, task, Tape(Parameters(1)), batch)
    b, _, _ = forward_batch(model, task, Tape(Parameters(1)), scrambled)
    # Root labels differ, so the losses differ, but the model inputs are the same.
    np.testing.assert_array_equal(value_of(a), value_of(b))


# Training -----------------------------------------------------------------

def test_zero_learning_rate_changes_nothing(data, task):
    config = TrainerConfig(batch_size=len(data.train_graphs), epochs=4, lr=0.0, shuffle=False)
    result = run_training(data.train_graphs, data.schema, SMALL_MODEL, task, config)
    fresh = Parameters(0)
    tape = Tape(fresh)
    forward_batch(GNNModel(SMALL_MODEL), task, tape, merge_batch(data.train_graphs))
    assert params_equal(result.artifact.params, fresh)
    losses = {r["loss"] for r in result.history}
    assert len(losses) == 1


def test_training_is_deterministic(data, task):
    a, b = _train(data, task), _train(data, task)
    assert a.history == b.history
    assert params_equal(a.artifact.params, b.artifact.params)
    assert _train(data, task, seed=1).history != a.history


def test_prefetch_matches_inline(data, task):
    assert _train(data, task, prefetch=True).history == _train(data, task).history


def test_records_match_in_memory(tmp_path, data, task):
    path = str(tmp_path / "train.gtr")
    write_records(path, (encode_graph(g, data.schema) for g in data.train_graphs))
    config = TrainerConfig(batch_size=8, epochs=2, lr=0.01, shuffle=False)
    from_file = run_training(path, data.schema, SMALL_MODEL, task, config)
    in_memory = run_training(data.train_graphs, data.schema, SMALL_MODEL, task, config)
    assert from_file.history == in_memory.history


def test_steps_per_epoch_cycles_data(data, task):
    result = _train(data, task, steps_per_epoch=7, epochs=2)
    assert [r["epoch"] for r in result.history] == [0] * 7 + [1] * 7
    assert result.history[-1]["step"] == 13


def test_non_finite_loss_aborts(data, task):
    def poison(graph):
        feat = np.asarray(graph.node_sets["paper"].features["feat"]).copy()
        feat[0, 0] = np.nan
        return replace_features(graph, node_sets={"paper": {"feat": feat}})

    config = TrainerConfig(batch_size=8)
    with pytest.raises(TrainingError, match="step 0"):
        run_training(data.train_graphs, data.schema, SMALL_MODEL, task, config, processors=[poison])


def test_batches_that_do_not_fit_are_skipped(data, task):
    result = _train(data, task, padding=SizeTargets(9, {"paper": 3, "topic": 3}))
    assert result.skipped_batches == 4 and result.history == []


def test_padding_is_neutral(data, task):
    model = GNNModel(SMALL_MODEL)
    batch = merge_batch(data.train_graphs[:5])
    targets = SizeTargets(6, {n: ns.total_size + 2 for n, ns in batch.node_sets.items()},
                          {n: es.total_size + 3 for n, es in batch.edge_sets.items()})
    padded, mask = pad_to_total_sizes(batch, targets)
    params = Parameters(3, np.float64)
    t1 = Tape(params)
    _, loss1, _ = forward_batch(model, task, t1, batch)
    g1 = t1.backward(loss1)
    t2 = Tape(params)
    _, loss2, _ = forward_batch(model, task, t2, padded, mask)
    g2 = t2.backward(loss2)
    assert float(value_of(loss1)) == pytest.approx(float(value_of(loss2)), abs=1e-6)
    assert set(g1) == set(g2)
    for name in g1:
        np.testing.assert_allclose(g1[name], g2[name], atol=1e-6)


def test_validation_runs_each_epoch(data, task):
    config = TrainerConfig(batch_size=8, epochs=2, lr=0.01)
    result = run_training(data.train_graphs, data.schema, SMALL_MODEL, task, config,
                          valid_data=data.held_out_graphs)
    assert [v["epoch"] for v in result.validation] == [0, 1]
    assert result.validation[0]["examples"] == len(data.held_out_graphs)


def test_empty_training_data(data, task):
    with pytest.raises(TrainingError, match="empty"):
        run_training([], data.schema, SMALL_MODEL, task, TrainerConfig())


# Evaluation, export, inference ---------------------------------------------

@pytest.fixture(scope="module")
def trained(data, task):
    return _train(data, task, epochs=2).artifact


def test_evaluate_replays_training_forward(data, task):
    full = len(data.train_graphs)
    config = TrainerConfig(batch_size=full, epochs=1, lr=0.0, shuffle=False)
    result = run_training(data.train_graphs, data.schema, SMALL_MODEL, task, config)
    metrics = evaluate(result.artifact, data.train_graphs, data.schema, batch_size=full)
    assert metrics["accuracy"] == result.history[-1]["accuracy"]
    assert metrics["loss"] == pytest.approx(result.history[-1]["loss"], rel=1e-6)


def test_evaluate_is_stable_and_handles_empty(data, trained):
    a = evaluate(trained, data.held_out_graphs, data.schema)
    assert a == evaluate(trained, data.held_out_graphs, data.schema)
    assert a["examples"] == len(data.held_out_graphs)
    assert evaluate(trained, [], data.schema) == {"examples": 0, "loss": None, "accuracy": None}


def test_export_round_trip(tmp_path, data, trained):
    path = str(tmp_path / "model.hgm")
    export_model(trained, path)
    loaded = load_model(path, data.schema)
    assert params_equal(loaded.params, trained.params)
    for name in trained.params:
        assert loaded.params[name].tobytes() == trained.params[name].tobytes()
    assert loaded.model_config == trained.model_config and loaded.task_config == trained.task_config
    assert evaluate(loaded, data.held_out_graphs, data.schema) == evaluate(trained, data.held_out_graphs,
                                                                            data.schema)


def test_tampered_artifact_rejected(data, trained):
    blob = bytearray(dump_artifact(trained))
    blob[-20] ^= 0x10
    with pytest.raises(ArtifactError, match="checksum"):
        parse_artifact(bytes(blob))
    with pytest.raises(ArtifactError):
        parse_artifact(b"NOTAMODEL" + bytes(blob[9:]))


def test_schema_mismatch_rejected(tmp_path, data, trained):
    path = str(tmp_path / "model.hgm")
    export_model(trained, path)
    other = schema_from_dict({"node_sets": {"paper": {"features": {"feat": {"dtype": "float32", "shape": [5]}}}}})
    with pytest.raises(ArtifactError, match="fingerprint"):
        load_model(path, other)
    with pytest.raises(ArtifactError, match="fingerprint"):
        evaluate(trained, data.held_out_graphs, other)


def test_artifact_params_must_match_config(data, trained):
    broken = ModelArtifact(trained.schema_fingerprint, trained.model_config, trained.task_config,
                           Parameters(0), {})
    for name, value in trained.params.items():
        broken.params[name] = value
    first = sorted(broken.params)[0]
    broken.params[first] = np.zeros((1, 1), dtype=np.float32)
    with pytest.raises(ValueError, match="shape"):
        evaluate(broken, data.held_out_graphs, data.schema)


def test_predictions_independent_of_batch_size(data, trained):
    one = list(predict(trained, data.held_out_graphs, data.schema, batch_size=1))
    eight = list(predict(trained, data.held_out_graphs, data.schema, batch_size=8))
    assert [r["record_index"] for r in one] == list(range(len(data.held_out_graphs)))
    for a, b in zip(one, eight):
        np.testing.assert_allclose(a["logits"], b["logits"], atol=1e-5)


def test_infer_files(tmp_path, data, trained):
    records = str(tmp_path / "held.gtr")
    write_records(records, (encode_graph(g, data.schema) for g in data.held_out_graphs[:1]))
    out = str(tmp_path / "pred.ndjson")
    assert infer(trained, records, data.schema, out) == 1
    lines = open(out).read().splitlines()
    assert lines[0].startswith("# hetgnn predictions") and len(lines) == 2
    row = json.loads(lines[1])
    assert row["record_index"] == 0 and len(row["logits"]) == 2
    empty = str(tmp_path / "empty.gtr")
    write_records(empty, [])
    assert infer(trained, empty, data.schema, out) == 0
    assert open(out).read().startswith("#") and len(open(out).read().splitlines()) == 1


def test_infer_reports_record_index(tmp_path, data, trained):
    records = str(tmp_path / "bad.gtr")
    payloads = [encode_graph(g, data.schema) for g in data.held_out_graphs[:3]]
    payloads[2] = payloads[2][:40]
    write_records(records, payloads)
    with pytest.raises(CorruptRecordError, match="record 2"):
        infer(trained, records, data.schema, str(tmp_path / "out.ndjson"))


# Config files -------------------------------------------------------------

def test_training_config_file(tmp_path):
    paths = write_two_community_files(str(tmp_path), num_papers=20, num_train=16)
    job = load_training_config(paths["train_config.json"])
    assert job.train_records == str(tmp_path / "train.gtr")
    assert job.trainer.batch_size == 16 and job.trainer.lr == 0.01
    assert job.task.node_set == "paper"
    doc = json.load(open(paths["train_config.json"]))
    doc["padding"] = {"num_components": 17, "node_sets": {"paper": 400}}
    assert job_from_config(doc, str(tmp_path)).trainer.padding.num_components == 17
    del doc["task"]
    with pytest.raises(ValueError, match="task"):
        job_from_config(doc, str(tmp_path))


def test_mag_example_config_builds_and_runs():
    rounds = expand_architecture(MAG_EXAMPLE_MODEL["architecture"])
    assert len(rounds) == 4
    paper_next = rounds[0]["node_sets"]["paper"]["next_state"]
    assert paper_next["dropout"] == 0.2 and paper_next["layer_norm"] is True
    assert rounds[0]["node_sets"]["paper"]["convs"]["cites"]["reduce_type"] == "sum"

    rng = np.random.default_rng(0)
    sizes = {"paper": 3, "author": 2, "institution": 1, "field_of_study": 2}
    node_sets = {n: NodeSet.from_fields([k], {"#id": np.array([f"{n}{i}" for i in range(k)])})
                 for n, k in sizes.items()}
    node_sets["paper"] = NodeSet.from_fields([3], {"feat": rng.normal(size=(3, 4)).astype(np.float32)})
    g = build_graph_tensor(node_sets=node_sets, edge_sets={
        "cites": EdgeSet.from_fields([2], Adjacency("paper", [0, 1], "paper", [1, 2])),
        "writes": EdgeSet.from_fields([2], Adjacency("author", [0, 1], "paper", [0, 0])),
        "affiliated_with": EdgeSet.from_fields([1], Adjacency("author", [0], "institution", [0])),
        "has_topic": EdgeSet.from_fields([2], Adjacency("paper", [0, 2], "field_of_study", [1, 0]))})
    out = GNNModel(MAG_EXAMPLE_MODEL)(g, Tape(Parameters(seed=0)))
    assert value_of(out.node_sets["paper"].features["hidden_state"]).shape == (3, 256)
    logits = task_from_dict(MAG_EXAMPLE_TASK).head(Tape(Parameters(seed=0)), np.zeros((1, 256), np.float32))
    assert value_of(logits).shape == (1, 349)
