from .metrics import MetricsReport, ResultItem, aggregate, dice, iou
from .reports import (
    beta_sweep,
    error_propagation_report,
    evaluate_conversations,
    evaluate_split,
    load_eval_set,
)

__all__ = [
    "MetricsReport",
    "ResultItem",
    "aggregate",
    "dice",
    "iou",
    "beta_sweep",
    "error_propagation_report",
    "evaluate_conversations",
    "evaluate_split",
    "load_eval_set",
]
