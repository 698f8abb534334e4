"""Confusion-matrix metrics and the per-class F1 state vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Mlp, forward


@dataclass
class StateVector:
    f1_per_class: np.ndarray
    round: int = 0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.f1_per_class, dtype=np.float64)


def confusion(preds: np.ndarray, truth: np.ndarray, n_classes: int) -> np.ndarray:
    """counts[t][p] = number of samples with true class t predicted as p."""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise ValueError("preds/truth length mismatch")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, preds), 1)
    return cm


def class_prf1(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class precision, recall, F1; any 0/0 is 0."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        r = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
    return p, r, f1


def accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


def evaluate(model: Mlp, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Confusion matrix of the model's argmax predictions on (x, y)."""
    preds = forward(model, x).argmax(axis=1)
    return confusion(preds, y, model.layer_dims[-1])


def compute_state(
    params: np.ndarray, arch: list[int], x: np.ndarray, y: np.ndarray, round_t: int = 0
) -> StateVector:
    """Per-class F1 of the aggregated model on a client's local training set."""
    if len(y) == 0:
        raise ValueError("empty dataset")
    model = Mlp(list(arch))
    model.set_params(params)
    _, _, f1 = class_prf1(evaluate(model, x, y))
    return StateVector(f1, round_t)
