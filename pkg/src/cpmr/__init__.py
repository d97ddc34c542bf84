"""Context-aware incremental sequential recommender.

Temporal states of users and items evolve continuously on history and
context graphs between interaction days, are fused through a gated
shared-expert block, and jump discretely when interactions arrive;
training optimizes InfoNCE ranking losses with truncated BPTT.
"""

from .data import (Dataset, RawEvent, canonicalize, k_core_filter,
                   load_dataset, parse_interactions, save_dataset)
from .evaluation import (MetricsReport, RankRecord, ablation_run,
                         incremental_eval, mrr, recall_at_k,
                         synthetic_trend_dataset, window_sweep)
from .graphs import EdgeStore, learnable_adjacency, normalize_adjacency
from .model import CpmrModel, ModelConfig, TemporalStates, evolve
from .training import TrainConfig, infonce_loss, sample_negatives, train

__all__ = [
    "Dataset", "RawEvent", "canonicalize", "k_core_filter", "load_dataset",
    "parse_interactions", "save_dataset", "MetricsReport", "RankRecord",
    "ablation_run", "incremental_eval", "mrr", "recall_at_k",
    "synthetic_trend_dataset", "window_sweep", "EdgeStore",
    "learnable_adjacency", "normalize_adjacency", "CpmrModel", "ModelConfig",
    "TemporalStates", "evolve", "TrainConfig", "infonce_loss",
    "sample_negatives", "train",
]

__version__ = "0.1.0"
