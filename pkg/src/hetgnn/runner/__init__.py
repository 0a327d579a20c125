"""Training, evaluation, model export and inference."""

from hetgnn.runner.artifact import (ArtifactError, ModelArtifact, dump_artifact, export_model, load_model,
                                    params_equal, parse_artifact)
from hetgnn.runner.synthetic import (SyntheticDataset, make_two_community_dataset, two_community_tables,
                                     write_two_community_files)
from hetgnn.runner.tasks import (RootNodeTask, TaskError, compute_task_loss, predictions, root_binary,
                                 root_multiclass, task_from_dict)
from hetgnn.runner.training import (TrainerConfig, TrainingError, TrainingJob, TrainResult, count_examples,
                                    evaluate, forward_batch, infer, iterate_batches, job_from_config,
                                    load_training_config, predict, run_training)

__all__ = [
    "ArtifactError", "ModelArtifact", "RootNodeTask", "SyntheticDataset", "TaskError", "TrainResult", "TrainerConfig",
    "TrainingError", "TrainingJob", "compute_task_loss", "count_examples", "dump_artifact", "evaluate",
    "export_model", "forward_batch", "infer", "iterate_batches", "job_from_config", "load_model",
    "load_training_config", "params_equal", "parse_artifact", "predict", "predictions", "root_binary",
    "root_multiclass", "run_training", "task_from_dict", "make_two_community_dataset", "two_community_tables",
    "write_two_community_files",
]
