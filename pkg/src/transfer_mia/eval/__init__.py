from .experiments import (
    ExperimentError,
    ExperimentResult,
    SweepResult,
    evaluate_preparation,
    fingerprint,
    run_q1,
    run_q2,
    run_q2_frozen_sweep,
    run_q3_transfer_attack,
)
from .metrics import MetricsError, MetricsReport, auc_score, compute_metrics

__all__ = [
    "ExperimentError",
    "ExperimentResult",
    "MetricsError",
    "MetricsReport",
    "SweepResult",
    "auc_score",
    "compute_metrics",
    "evaluate_preparation",
    "fingerprint",
    "run_q1",
    "run_q2",
    "run_q2_frozen_sweep",
    "run_q3_transfer_attack",
]
