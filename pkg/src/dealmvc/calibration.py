"""Pseudo-label graphs, feature-similarity graphs and the calibration losses.

Graphs are built per batch. The pseudo-label graph keeps a pair (i, j)
only when the dot product of their class-probability vectors clears the
threshold ``tau``; self-loops are always 1. The calibration loss is a row
softmax cross-entropy of the cosine graph against the pseudo-label graph,
with the pseudo-label graph acting as a fixed target.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import torch
from torch import Tensor

from .errors import (
    InvalidDistribution,
    InvalidThreshold,
    NonFiniteLoss,
    ShapeMismatch,
    TooFewViews,
    ZeroNormRow,
)

DIST_TOL = 1e-6
NORM_EPS = 1e-12


def _check_rows_stochastic(p: Tensor, what: str) -> None:
    p = p.detach()
    if p.dim() != 2:
        raise InvalidDistribution(f"{what} must be an (N, K) matrix, got shape {tuple(p.shape)}")
    if bool((p < 0).any()):
        raise InvalidDistribution(f"{what} has negative entries")
    dev = (p.sum(dim=1) - 1.0).abs().max()
    if float(dev) > DIST_TOL:
        raise InvalidDistribution(f"{what} rows do not sum to 1 (max deviation {float(dev):.2e})")


def pseudo_label_graph(p_row: Tensor, p_col: Tensor, tau: float, differentiable: bool = False) -> Tensor:
    """W_ij = 1 on the diagonal, p_row_i . p_col_j where that is >= tau, else 0.

    By default the result is detached. ``differentiable=True`` keeps the
    surviving off-diagonal entries in the autograd graph (the consistency
    loss trains the classification head through them).
    """
    if not 0.0 < tau < 1.0:
        raise InvalidThreshold(f"tau must lie in (0, 1), got {tau}")
    _check_rows_stochastic(p_row, "p_row")
    _check_rows_stochastic(p_col, "p_col")
    if p_row.shape != p_col.shape:
        raise ShapeMismatch(f"p_row {tuple(p_row.shape)} vs p_col {tuple(p_col.shape)}")
    if not differentiable:
        p_row, p_col = p_row.detach(), p_col.detach()
    # Broadcast-and-sum rather than matmul: the per-entry reduction order is
    # then identical for (m, n) and (n, m), so W^{mn} == (W^{nm})^T bitwise.
    dots = (p_row.unsqueeze(1) * p_col.unsqueeze(0)).sum(dim=-1)
    n = dots.shape[0]
    eye = torch.eye(n, dtype=torch.bool, device=dots.device)
    keep = (dots >= tau) & ~eye
    zeros = torch.zeros_like(dots)
    W = torch.where(keep, dots, zeros)
    return torch.where(eye, torch.ones_like(dots), W)


def feature_similarity_graph(z_row: Tensor, z_col: Tensor) -> Tensor:
    """Cosine similarity between every row of ``z_row`` and every row of ``z_col``."""
    if z_row.dim() != 2 or z_col.dim() != 2 or z_row.shape[1] != z_col.shape[1]:
        raise ShapeMismatch(f"incompatible embeddings {tuple(z_row.shape)} and {tuple(z_col.shape)}")
    n_row = z_row.norm(dim=1)
    n_col = z_col.norm(dim=1)
    if float(n_row.detach().min()) < NORM_EPS or float(n_col.detach().min()) < NORM_EPS:
        raise ZeroNormRow("cosine similarity is undefined for a zero embedding row")
    u = z_row / n_row.unsqueeze(1)
    v = z_col / n_col.unsqueeze(1)
    return u @ v.T


def calibration_loss(W: Tensor, S: Tensor) -> Tensor:
    """Mean over rows of -sum_j W_ij log softmax(S_i)_j. ``W`` is a constant target."""
    if W.shape != S.shape or W.dim() != 2 or W.shape[0] != W.shape[1]:
        raise ShapeMismatch(f"W {tuple(W.shape)} and S {tuple(S.shape)} must be equal square matrices")
    log_sm = torch.log_softmax(S, dim=1)
    return -(W.detach() * log_sm).sum(dim=1).mean()


def view_pairs(n_views: int) -> list:
    return list(itertools.combinations(range(n_views), 2))


def local_graphs(zs: Sequence[Tensor], ps: Sequence[Tensor], tau: float, differentiable: bool = False):
    """(W^{mn}, S^{mn}) for every unordered view pair m < n, in pair order."""
    if len(zs) < 2:
        raise TooFewViews(f"local calibration needs at least two views, got {len(zs)}")
    if len(zs) != len(ps):
        raise ShapeMismatch(f"{len(zs)} embeddings but {len(ps)} pseudo-label matrices")
    out = []
    for m, n in view_pairs(len(zs)):
        W = pseudo_label_graph(ps[m], ps[n], tau, differentiable)
        S = feature_similarity_graph(zs[m], zs[n])
        out.append((W, S))
    return out


def local_calibration_loss(zs: Sequence[Tensor], ps: Sequence[Tensor], tau: float) -> Tensor:
    pairs = local_graphs(zs, ps, tau)
    return sum_pair_losses(pairs)


def sum_pair_losses(pairs) -> Tensor:
    total = None
    for W, S in pairs:
        loss = calibration_loss(W, S)
        total = loss if total is None else total + loss
    return total


def label_consistency_loss(W_global: Tensor, W_locals: Sequence[Tensor]) -> Tensor:
    """Mean over local graphs of the squared Frobenius gap to the global graph."""
    if len(W_locals) == 0:
        raise TooFewViews("no local pseudo-label graphs given")
    total = None
    for b, Wb in enumerate(W_locals):
        if Wb.shape != W_global.shape:
            raise ShapeMismatch(f"local graph {b} has shape {tuple(Wb.shape)}, global {tuple(W_global.shape)}")
        gap = ((W_global - Wb) ** 2).sum()
        total = gap if total is None else total + gap
    return total / len(W_locals)


def _scalar(value) -> float:
    return float(value.detach()) if isinstance(value, Tensor) else float(value)


def total_loss(l_rec, l_local, l_global, l_con, alpha: float = 1.0, beta: float = 1.0, mu: float = 1.0):
    """L_R + alpha L_local + beta L_global + mu L_con.

    Terms whose weight is exactly zero are left out of the sum instead of
    being multiplied by zero, so an ablated term never reaches the gradient.
    """
    parts = [(1.0, l_rec), (alpha, l_local), (beta, l_global), (mu, l_con)]
    values = [_scalar(v) for _, v in parts if v is not None]
    if not all(math.isfinite(v) for v in values):
        raise NonFiniteLoss(f"non-finite loss component: {values}")
    total = l_rec
    for weight, value in parts[1:]:
        if weight != 0:
            total = total + weight * value
    return total
