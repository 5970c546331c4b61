"""Deconfounded content-based tag recommendation laboratory."""

from .data import (
    Dataset,
    DatasetError,
    Triplet,
    UgcRecord,
    UploaderProfile,
    compute_topic_histogram,
    load_dataset,
    save_dataset,
)
from .synth import GenConfig, InterventionSpec, generate, intervened_split
from .backbones import (
    LightGcnModel,
    NfmModel,
    Score,
    joint_score,
    lightgcn_propagate,
    make_model,
    uploader_repr,
)
from .optim import OptimConfig, ParamStore
from .training import (
    TrainConfig,
    UploaderPool,
    averaged_estimate,
    backdoor_adjust_train,
    bootstrap_sample,
    burn_in,
    mc_estimate,
    predict_topk,
    strategy_scores,
    train_pipeline,
    training_loss,
)
from .metrics import (
    Metrics,
    RankedPrediction,
    compare_significance,
    evaluate,
    ndcg_at_k,
    recall_at_k,
)
from .sweeps import sweep_intervention, sweep_ns

__all__ = [name for name in dir() if not name.startswith("_")]
