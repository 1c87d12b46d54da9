"""Shortcut-aware neuro-symbolic learning on synthetic concept tasks."""

__version__ = "0.1.0"

from .knowledge import (ConceptDistribution, ConceptSchema, KnowledgeError, Reasoner,
                        label_distribution, map_predict, parse_knowledge)
from .tasks import TaskSpec, builtin_task, generate_dataset, load_task
from .nesy import NesyPredictor, build_predictor, dpl_nll
from .bears import BearsConfig, Ensemble, MCDropout, train_deep_ensemble, train_ensemble, train_predictor
from .metrics import MetricsReport, ece, evaluate
from .rs import enumerate_optimal_maps, max_entropy_mixture, rs_report
from .active import ActiveConfig, active_loop

__all__ = [
    "ActiveConfig", "BearsConfig", "ConceptDistribution", "ConceptSchema", "Ensemble",
    "KnowledgeError", "MCDropout", "MetricsReport", "NesyPredictor", "Reasoner", "TaskSpec",
    "active_loop", "build_predictor", "builtin_task", "dpl_nll", "ece", "enumerate_optimal_maps",
    "evaluate", "generate_dataset", "label_distribution", "load_task", "map_predict",
    "max_entropy_mixture", "parse_knowledge", "rs_report", "train_deep_ensemble",
    "train_ensemble", "train_predictor",
]
