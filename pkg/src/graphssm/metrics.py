"""Classification metrics from a confusion matrix (rows true, cols predicted)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "confusion_matrix",
    "overall_accuracy",
    "per_class_accuracy",
    "average_accuracy",
    "cohen_kappa",
    "EvalReport",
]


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"label arrays differ: {y_true.shape} vs {y_pred.shape}")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= num_classes
                        or y_pred.min() < 0 or y_pred.max() >= num_classes):
        raise ValueError("labels outside [0, num_classes)")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def overall_accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm) / total)


def per_class_accuracy(cm: np.ndarray) -> np.ndarray:
    """Recall per class; nan for classes with no true samples."""
    support = cm.sum(axis=1)
    out = np.full(cm.shape[0], np.nan)
    nz = support > 0
    out[nz] = np.diag(cm)[nz] / support[nz]
    return out

def average_accuracy(cm: np.ndarray) -> float:
    """Mean recall over classes that actually appear."""
    recalls = per_class_accuracy(cm)
    present = ~np.isnan(recalls)
    if not present.any():
        raise ValueError("no class has support")
    return float(recalls[present].mean())


def cohen_kappa(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    po = np.trace(cm) / total
    pe = float((cm.sum(axis=1) / total) @ (cm.sum(axis=0) / total))
    if pe >= 1.0:
        return 0.0 if po >= 1.0 else float("-inf")
    return float((po - pe) / (1.0 - pe))


@dataclass
class EvalReport:
    """Evaluation summary. ``runtime_seconds`` is informational and is left
    out of the canonical JSON so identical runs serialize identically."""

    confusion: np.ndarray
    per_class: np.ndarray
    oa: float
    aa: float
    kappa: float
    test_count: int
    config: dict = field(default_factory=dict)
    flops: dict = field(default_factory=dict)
    runtime_seconds: float = 0.0

    @staticmethod
    def from_confusion(cm: np.ndarray, config: dict | None = None,
                       flops: dict | None = None,
                       runtime_seconds: float = 0.0) -> "EvalReport":
        return EvalReport(
            confusion=cm,
            per_class=per_class_accuracy(cm),
            oa=overall_accuracy(cm),
            aa=average_accuracy(cm),
            kappa=cohen_kappa(cm),
            test_count=int(cm.sum()),
            config=dict(config or {}),
            flops=dict(flops or {}),
            runtime_seconds=runtime_seconds,
        )

    def to_json(self) -> str:
        """Canonical, deterministic serialization (no wall-clock fields)."""
        payload = {
            "confusion": self.confusion.astype(int).tolist(),
            "per_class_accuracy": [None if np.isnan(v) else float(v)
                                   for v in self.per_class],
            "oa": float(self.oa),
            "aa": float(self.aa),
            "kappa": float(self.kappa),
            "test_count": self.test_count,
            "config": self.config,
            "flops": self.flops,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"
