"""Clustering metrics: ACC (optimal one-to-one matching), NMI, purity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DealMVCError, LengthMismatch


class EmptyInput(DealMVCError, ValueError):
    pass


def _as_labels(pred, truth):
    pred = np.asarray(pred).ravel()
    truth = np.asarray(truth).ravel()
    if pred.shape != truth.shape:
        raise LengthMismatch(f"pred has {pred.size} labels, truth has {truth.size}")
    if pred.size == 0:
        raise EmptyInput("cannot score an empty labelling")
    return pred, truth


def contingency(pred, truth) -> np.ndarray:
    """Counts table: rows are predicted clusters, columns true classes."""
    pred, truth = _as_labels(pred, truth)
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(truth, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def clustering_accuracy(pred, truth) -> float:
    table = contingency(pred, truth)
    # Rectangular assignment: surplus predicted clusters stay unmatched.
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    table = contingency(pred, truth).astype(np.float64)
    n = table.sum()
    h_pred = _entropy(table.sum(axis=1))
    h_true = _entropy(table.sum(axis=0))
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n**2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(np.clip(mi / ((h_pred + h_true) / 2.0), 0.0, 1.0))


def purity(pred, truth) -> float:
    table = contingency(pred, truth)
    return float(table.max(axis=1).sum() / table.sum())


@dataclass(frozen=True)
class ClusterResult:
    acc: float
    nmi: float
    pur: float

    def record(self, **extra) -> str:
        fields = {"acc": f"{self.acc:.6f}", "nmi": f"{self.nmi:.6f}", "pur": f"{self.pur:.6f}"}
        fields.update({k: str(v) for k, v in extra.items()})
        return " ".join(f"{k}={v}" for k, v in fields.items())


def evaluate(pred, truth) -> ClusterResult:
    return ClusterResult(clustering_accuracy(pred, truth), nmi(pred, truth), purity(pred, truth))
