"""Adaptive global fusion of the per-view embeddings.

One fusion step: attention over views gives ``a``, the view-probability
network maps the stored sampling vector to a new ``q``, their entrywise
product is the regulatory factor ``r``, and the fusion weights are updated
as ``w <- (r * w) / sum(r * w)``. The global feature is the ``w``-weighted
sum of the view embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import Tensor

from .errors import DegenerateWeights, InvalidDistribution, LengthMismatch, ShapeMismatch

DIST_TOL = 1e-6
DEGENERATE_EPS = 1e-12


@dataclass
class FusionState:
    a: np.ndarray
    q: np.ndarray
    r: np.ndarray
    w: np.ndarray
    t: int

    @classmethod
    def from_model(cls, model) -> "FusionState":
        def arr(x):
            return x.detach().cpu().numpy().copy()

        return cls(arr(model.a), arr(model.q), arr(model.r), arr(model.w), int(model.t))

    def header(self) -> list:
        V = len(self.w)
        return ["t"] + [f"{k}_{v}" for k in ("a", "q", "r", "w") for v in range(V)]

    def row(self) -> list:
        return [self.t, *self.a.tolist(), *self.q.tolist(), *self.r.tolist(), *self.w.tolist()]


def stack_views(zs: Sequence[Tensor]) -> Tensor:
    if len(zs) == 0:
        raise ShapeMismatch("no view embeddings given")
    shape = zs[0].shape
    for v, z in enumerate(zs):
        if z.dim() != 2 or z.shape != shape:
            raise ShapeMismatch(f"embedding {v} has shape {tuple(z.shape)}, expected {tuple(shape)}")
    return torch.stack(list(zs), dim=1)  # (N_b, V, D)


def _check_distribution(x: Tensor, what: str) -> None:
    x = x.detach()
    if x.dim() != 1:
        raise InvalidDistribution(f"{what} must be a vector, got shape {tuple(x.shape)}")
    if bool((x < 0).any()) or abs(float(x.sum()) - 1.0) > DIST_TOL:
        raise InvalidDistribution(f"{what} is not a probability vector: {x.tolist()}")


def attention_weights(attention, zs: Sequence[Tensor]) -> Tensor:
    return attention(stack_views(zs))


def view_sampling_probs(q: Tensor, view_prob) -> Tensor:
    """New sampling distribution from the previous one.

    The input ``q`` is treated as a constant; only the network weights get
    gradients.
    """
    _check_distribution(q, "q")
    return view_prob(q.detach().clone())


def regulatory_factor(a: Tensor, q: Tensor) -> Tensor:
    if a.shape != q.shape:
        raise LengthMismatch(f"a has shape {tuple(a.shape)}, q has {tuple(q.shape)}")
    return a * q


def fuse(zs: Sequence[Tensor], w: Tensor, r: Tensor):
    """Returns ``(w_next, z_global)``."""
    z_stack = stack_views(zs)
    V = z_stack.shape[1]
    if w.shape != (V,) or r.shape != (V,):
        raise LengthMismatch(f"expected weight vectors of length {V}, got {tuple(w.shape)} and {tuple(r.shape)}")
    raw = r * w
    total = raw.sum()
    if float(total.detach()) < DEGENERATE_EPS:
        raise DegenerateWeights(f"sum(r * w) = {float(total.detach()):.3e}; fusion weights collapsed")
    w_next = raw / total
    z_global = (z_stack * w_next.view(1, V, 1)).sum(dim=1)
    return w_next, z_global


def weighted_sum(zs: Sequence[Tensor], w: Tensor) -> Tensor:
    z_stack = stack_views(zs)
    return (z_stack * w.view(1, -1, 1)).sum(dim=1)


def adaptive_fusion(model, zs: Sequence[Tensor], use_attention: bool = True, use_sampling: bool = True) -> Tensor:
    """One training-time fusion step; updates the model's fusion buffers."""
    V = model.n_views
    uniform = torch.full((V,), 1.0 / V, dtype=model.w.dtype)
    a = attention_weights(model.attention, zs) if use_attention else uniform
    q = view_sampling_probs(model.q, model.view_prob) if use_sampling else uniform
    r = regulatory_factor(a, q)
    w_next, z_global = fuse(zs, model.w.clone(), r)
    with torch.no_grad():
        model.a.copy_(a)
        model.q.copy_(q)
        model.r.copy_(r)
        model.w.copy_(w_next)
        model.t += 1
    return z_global


def global_embedding(model, zs: Sequence[Tensor]) -> Tensor:
    """Inference-time fusion with the stored weights; leaves state untouched."""
    return weighted_sum(zs, model.w)
