"""Unsupervised discovery of letters and words in continuous time series (NPB-DAA)."""

from .evaluation import adjusted_rand_index, dataset_ari
from .gibbs import GibbsConfig, GibbsTrace, run_gibbs, select_map_trial
from .messages import compute_backward_messages, word_log_likelihood
from .model import (
    FeatureSequence,
    Hyperparameters,
    ModelState,
    Segmentation,
    generate_sequence,
    joint_log_likelihood,
    make_experiment1_dataset,
    sample_model_from_prior,
)

__all__ = [
    "FeatureSequence", "GibbsConfig", "GibbsTrace", "Hyperparameters", "ModelState",
    "Segmentation", "adjusted_rand_index", "compute_backward_messages", "dataset_ari",
    "generate_sequence", "joint_log_likelihood", "make_experiment1_dataset", "run_gibbs",
    "sample_model_from_prior", "select_map_trial", "word_log_likelihood",
]
