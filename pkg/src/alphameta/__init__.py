"""Weighted meta-learning with kernel-distance source weights."""

from .bounds import BoundConfig, BoundBreakdown, evaluate_corollary_bound, evaluate_theorem2_bound, rademacher_linear
from .experiments import ExperimentSpec, run_experiment, write_outputs
from .features import BasisFn, LossEmbedding, embed, loss_kernel
from .gradient_meta import TrainConfig, adapt_mlp, train_alpha_maml, train_direct_bound
from .kernel_distance import TaskGram, build_task_gram, kernel_distance, per_source_distances
from .linear_meta import LinearMetaModel, adapt_linear, fit_weighted_linear, rmse
from .mlp import MlpParams, init_mlp
from .tasks import SyntheticSpec, Task, TaskCollection, generate, load_csv_tasks
from .weights import SimplexWeights, solve_alpha_qp, solve_alpha_threshold, solve_weights, uniform_weights

__version__ = "0.1.0"

__all__ = [
    "BasisFn", "BoundBreakdown", "BoundConfig", "ExperimentSpec", "LinearMetaModel", "LossEmbedding",
    "MlpParams", "SimplexWeights", "SyntheticSpec", "Task", "TaskCollection", "TaskGram", "TrainConfig",
    "adapt_linear", "adapt_mlp", "build_task_gram", "embed", "evaluate_corollary_bound",
    "evaluate_theorem2_bound", "fit_weighted_linear", "generate", "init_mlp", "kernel_distance",
    "load_csv_tasks", "loss_kernel", "per_source_distances", "rademacher_linear", "rmse", "run_experiment",
    "solve_alpha_qp", "solve_alpha_threshold", "solve_weights", "train_alpha_maml", "train_direct_bound",
    "uniform_weights", "write_outputs",
]
