"""Explainable aesthetic-score regression from attribute tables.

Modules: ``tabular`` (ingestion, splits, synthetic data), ``trees`` (random
forest, gradient boosting), ``svr``, ``mlp``, ``metrics`` (scores and the OLS
baseline), ``shapley`` (exact, kernel and tree attributions), ``pipeline`` and
``cli``.
"""
from .errors import AesthlabError
from .models import load_model, predict, save_model
from .pipeline import ExperimentConfig, emit_report, run_experiment

__all__ = ["AesthlabError", "ExperimentConfig", "emit_report", "load_model", "predict", "run_experiment",
           "save_model"]
__version__ = "0.1.0"
