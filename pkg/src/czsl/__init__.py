"""Continual generalized zero-shot learning on pre-extracted features.

Gated attribute embeddings with scaled row normalization, classified by
cosine similarity, trained with first-order meta-learning over
N-way/K-shot episodes drawn from the current task and a constant-size
replay reservoir. Ships the three standard evaluation protocols (one-off
GZSL, fixed continual, dynamic continual) plus a synthetic dataset
generator for desk-scale verification.
"""

from .continual import Episode, Reservoir, TrainConfig, run_stream, run_task, sample_episode
from .data import DatasetContainer, DatasetMeta, REGISTRY, read_container, synth_dataset, write_container
from .model import ModelConfig, ModelParams, init_params, load_checkpoint, predict, save_checkpoint
from .numerics import finite_diff_grad, make_rng
from .optim import AdamState, MetaSchedule, adam_step, inner_loop, meta_lr, reptile_outer_step
from .protocols import (
    MetricsRecord,
    ProtocolPlan,
    build_dynamic_splits,
    build_fixed_splits,
    build_gzsl_plan,
    evaluate_dynamic,
    evaluate_fixed,
    evaluate_gzsl,
    evaluate_plan,
    harmonic_mean,
    per_class_accuracy,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "DatasetContainer",
    "DatasetMeta",
    "Episode",
    "MetaSchedule",
    "MetricsRecord",
    "ModelConfig",
    "ModelParams",
    "ProtocolPlan",
    "REGISTRY",
    "Reservoir",
    "TrainConfig",
    "adam_step",
    "build_dynamic_splits",
    "build_fixed_splits",
    "build_gzsl_plan",
    "evaluate_dynamic",
    "evaluate_fixed",
    "evaluate_gzsl",
    "evaluate_plan",
    "finite_diff_grad",
    "harmonic_mean",
    "init_params",
    "inner_loop",
    "load_checkpoint",
    "make_rng",
    "meta_lr",
    "per_class_accuracy",
    "predict",
    "read_container",
    "reptile_outer_step",
    "run_stream",
    "run_task",
    "sample_episode",
    "save_checkpoint",
    "synth_dataset",
    "write_container",
]
