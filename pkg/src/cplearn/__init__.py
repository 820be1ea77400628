"""Collapse-proof non-contrastive representation learning on a frozen
bipolar code dictionary, with a desk-scale verification suite for its
optimality and collapse-avoidance claims.
"""

from .autodiff import Tape, Tensor, grad_check
from .dictionary import (
    Dictionary,
    OrthogonalityStats,
    cosine_stats,
    exact_orthogonal_dictionary,
    sample_dictionary,
)
from .losses import (
    LossBreakdown,
    Prior,
    collapse_value_certificate,
    invariance_loss,
    lower_bound_value,
    prior_matching_loss,
    reverse_prior_matching_loss,
    total_loss,
)
from .optimality import (
    AlignmentReport,
    Lemma1Report,
    check_adjacency,
    check_alignment,
    check_covariance,
    check_lemma1,
    construct_optimal_embeddings,
    extrema_prob_matrix,
    optimize_simplex,
)
from .projector import (
    EmbeddingMatrix,
    ProbMatrix,
    ProjectorParams,
    clip_probabilities,
    code_probabilities,
    embed,
    temperature,
)
from .diagnostics import (
    CollapseReport,
    collapse_report,
    gmm_entropy,
    nmi,
    representation_rank,
    singular_spectrum,
)
from .optim import Adam, AdamState, adam_update
from .trainer import (
    AugmentConfig,
    MLPBackbone,
    TrainConfig,
    augment,
    linear_probe,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .config import RunConfig, load_config, parse_config, serialize_config
from .run import run_train

__version__ = "0.1.0"

__all__ = [
    "Adam", "AdamState", "adam_update", "AlignmentReport", "AugmentConfig",
    "CollapseReport", "Dictionary", "EmbeddingMatrix", "Lemma1Report",
    "LossBreakdown", "MLPBackbone", "OrthogonalityStats", "Prior", "ProbMatrix",
    "ProjectorParams", "RunConfig", "Tape", "Tensor", "TrainConfig",
    "augment", "check_adjacency", "check_alignment", "check_covariance",
    "check_lemma1", "clip_probabilities", "code_probabilities",
    "collapse_report", "collapse_value_certificate", "construct_optimal_embeddings",
    "cosine_stats", "embed", "exact_orthogonal_dictionary", "extrema_prob_matrix",
    "gmm_entropy", "grad_check", "invariance_loss", "linear_probe",
    "load_checkpoint", "load_config", "lower_bound_value", "nmi",
    "optimize_simplex", "parse_config", "prior_matching_loss",
    "representation_rank", "reverse_prior_matching_loss", "run_train",
    "sample_dictionary", "save_checkpoint", "serialize_config",
    "singular_spectrum", "temperature", "total_loss", "train_step",
]
