"""Experiment orchestration: datasets, pipelines, metrics and reports."""

from .config import PIPELINES, SEED_OFFSETS, ExperimentConfig, component_seed, full_config, load_config
from .dataset import Dataset, generate_dataset
from .metrics import MetricsRecord, report, write_accuracy_csv, write_confusion_csv
from .pipelines import (ModelStore, PipelineError, clean_accuracy, evaluate_cgan, evaluate_jcaecnn,
                        run_cgan, run_experiment, run_jcaecnn, run_traditional, train_awgn_classifier,
                        train_cnn_d, train_models)

__all__ = [
    "PIPELINES", "SEED_OFFSETS", "ExperimentConfig", "component_seed", "full_config", "load_config",
    "Dataset", "generate_dataset", "MetricsRecord", "report", "write_accuracy_csv", "write_confusion_csv",
    "ModelStore", "PipelineError", "clean_accuracy", "evaluate_cgan", "evaluate_jcaecnn", "run_cgan",
    "run_experiment", "run_jcaecnn", "run_traditional", "train_awgn_classifier", "train_cnn_d", "train_models",
]
