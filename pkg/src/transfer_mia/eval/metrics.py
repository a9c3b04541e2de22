"""Attack metrics. AUC is the Mann-Whitney statistic with tied pairs counted one half."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    accuracy: float
    precision: float
    recall: float
    threshold: float
    n_member: int
    n_nonmember: int

    def as_dict(self) -> dict:
        return asdict(self)

    def row(self) -> list[float]:
        return [self.auc, self.accuracy, self.precision, self.recall]


def auc_score(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUC needs both members and non-members")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metrics(scores, labels, threshold: float = 0.5) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise MetricsError(f"length mismatch: {len(scores)} scores vs {len(labels)} labels")
    if not np.isin(labels, (0, 1)).all():
        raise MetricsError("labels must be 0 or 1")
    auc = auc_score(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1
    tp = int((predicted & actual).sum())
    n_pred = int(predicted.sum())
    return MetricsReport(
        auc=auc,
        accuracy=float((predicted == actual).mean()),
        precision=tp / n_pred if n_pred else 0.0,
        recall=tp / int(actual.sum()),
        threshold=float(threshold),
        n_member=int(actual.sum()),
        n_nonmember=int((~actual).sum()),
    )
