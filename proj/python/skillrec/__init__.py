"""Python bindings for the skillrec two-stage recommender."""

from ._skillrec import (
    Catalog,
    InvalidArgument,
    KeywordIndex,
    ModelShortlister,
    ParseError,
    Reranker,
    Skill,
    SkillrecError,
    ValidationError,
    calibrate_tau_log,
    combine,
    cutoff_for_rate,
    default_experiment_config,
    default_world_config,
    evaluate,
    fnv1a64,
    ndcg_at_k,
    precision_at_k,
    run_pipeline,
    simulate,
    spearman,
    tokenize,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
