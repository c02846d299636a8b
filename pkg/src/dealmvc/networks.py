"""Learnable building blocks: per-view autoencoders, the shared
classification head, the view-attention network and the view-probability
network, assembled into :class:`DealMVC`.

Everything is float64 by default; the models are small enough that the
extra precision costs little and it keeps finite-difference checks sharp.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import torch
from torch import Tensor, nn

from .errors import ShapeMismatch

DTYPE = torch.float64


def he_uniform_(module: nn.Module, generator: Optional[torch.Generator] = None) -> None:
    """Fan-in uniform init, bound sqrt(6 / fan_in), zero biases."""
    for name, p in module.named_parameters(recurse=False):
        if p.dim() >= 2:
            fan_in = p.shape[1]
            bound = math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                p.uniform_(-bound, bound, generator=generator)
        elif name.endswith("bias"):
            nn.init.zeros_(p)


def mlp(widths: Sequence[int], dtype=DTYPE) -> nn.Sequential:
    """ReLU multilayer perceptron with a linear last layer."""
    layers = []
    for i in range(len(widths) - 1):
        layers.append(nn.Linear(widths[i], widths[i + 1], dtype=dtype))
        if i < len(widths) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _check_width(x: Tensor, width: int, what: str) -> None:
    if x.dim() != 2 or x.shape[1] != width:
        raise ShapeMismatch(f"{what} expects a (N, {width}) matrix, got {tuple(x.shape)}")


class ViewAutoencoder(nn.Module):
    """Encoder d_v -> hidden... -> D and its mirror-image decoder."""

    def __init__(self, in_dim: int, embed_dim: int = 128, hidden: Sequence[int] = (512, 256), dtype=DTYPE):
        super().__init__()
        widths = [in_dim, *hidden, embed_dim]
        self.encoder = mlp(widths, dtype)
        self.decoder = mlp(widths[::-1], dtype)
        self.in_dim = in_dim
        self.embed_dim = embed_dim

    def encode(self, x: Tensor) -> Tensor:
        _check_width(x, self.in_dim, "encoder")
        return self.encoder(x)

    def decode(self, z: Tensor) -> Tensor:
        _check_width(z, self.embed_dim, "decoder")
        return self.decoder(z)

    def forward(self, x: Tensor):
        z = self.encode(x)
        return z, self.decode(z)


class ClassificationHead(nn.Module):
    def __init__(self, embed_dim: int, n_clusters: int, dtype=DTYPE):
        super().__init__()
        self.linear = nn.Linear(embed_dim, n_clusters, dtype=dtype)

    def logits(self, z: Tensor) -> Tensor:
        _check_width(z, self.linear.in_features, "classification head")
        return self.linear(z)

    def forward(self, z: Tensor) -> Tensor:
        return torch.softmax(self.logits(z), dim=1)


class AttentionNet(nn.Module):
    """LayerNorm -> single-head self-attention across the view axis ->
    mean over samples -> per-view feed-forward scorer -> softmax over views.
    """

    def __init__(self, embed_dim: int, hidden: int = 64, dtype=DTYPE):
        super().__init__()
        self.norm = nn.LayerNorm(embed_dim, dtype=dtype)
        self.attn = nn.MultiheadAttention(embed_dim, num_heads=1, batch_first=True, dtype=dtype)
        self.ffn = mlp([embed_dim, hidden, 1], dtype)

    def forward(self, z_stack: Tensor) -> Tensor:
        # z_stack: (N_b, V, D)
        h = self.norm(z_stack)
        h, _ = self.attn(h, h, h, need_weights=False)
        pooled = h.mean(dim=0)  # (V, D)
        return torch.softmax(self.ffn(pooled).squeeze(-1), dim=0)


class ViewProbabilityNet(nn.Module):
    def __init__(self, n_views: int, hidden: int = 32, dtype=DTYPE):
        super().__init__()
        self.net = mlp([n_views, hidden, n_views], dtype)

    def forward(self, q: Tensor) -> Tensor:
        return torch.softmax(self.net(q), dim=-1)


class DealMVC(nn.Module):
    """All learnable state of the method.

    Besides parameters it carries the fusion buffers ``w`` (fusion weights),
    ``q`` (view sampling distribution), the most recent ``a`` and ``r``, and
    the fusion step counter ``t``. ``head_ready`` flips once the
    classification head has been initialised for the contrastive stage.
    """

    def __init__(
        self,
        dims: Sequence[int],
        n_clusters: int,
        embed_dim: int = 128,
        hidden: Sequence[int] = (512, 256),
        attn_hidden: int = 64,
        prob_hidden: int = 32,
        seed: int = 0,
        dtype=DTYPE,
    ):
        super().__init__()
        self.dims = [int(d) for d in dims]
        self.n_views = len(self.dims)
        self.n_clusters = int(n_clusters)
        self.embed_dim = int(embed_dim)
        self.hidden = [int(h) for h in hidden]
        self.attn_hidden = int(attn_hidden)
        self.prob_hidden = int(prob_hidden)

        self.autoencoders = nn.ModuleList(
            [ViewAutoencoder(d, embed_dim, hidden, dtype) for d in self.dims]
        )
        self.head = ClassificationHead(embed_dim, n_clusters, dtype)
        self.attention = AttentionNet(embed_dim, attn_hidden, dtype)
        self.view_prob = ViewProbabilityNet(self.n_views, prob_hidden, dtype)

        V = self.n_views
        uniform = torch.full((V,), 1.0 / V, dtype=dtype)
        self.register_buffer("w", uniform.clone())
        self.register_buffer("q", uniform.clone())
        self.register_buffer("a", uniform.clone())
        self.register_buffer("r", uniform * uniform)
        self.register_buffer("t", torch.zeros((), dtype=torch.int64))
        self.register_buffer("head_ready", torch.zeros((), dtype=torch.bool))

        g = torch.Generator().manual_seed(int(seed))
        for m in self.modules():
            he_uniform_(m, g)
        # Zero scorer outputs: fusion starts from uniform a and q, and only
        # moves away from equal view weights once those networks learn to.
        for last in (self.attention.ffn[-1], self.view_prob.net[-1]):
            nn.init.zeros_(last.weight)
            nn.init.zeros_(last.bias)

    def config_dict(self) -> dict:
        return {
            "dims": self.dims,
            "n_clusters": self.n_clusters,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "attn_hidden": self.attn_hidden,
            "prob_hidden": self.prob_hidden,
        }

    def encode(self, v: int, x: Tensor) -> Tensor:
        return self.autoencoders[v].encode(x)

    def decode(self, v: int, z: Tensor) -> Tensor:
        return self.autoencoders[v].decode(z)

    def encode_all(self, xs: Sequence[Tensor]) -> list:
        if len(xs) != self.n_views:
            raise ShapeMismatch(f"model has {self.n_views} views, got {len(xs)} inputs")
        return [ae.encode(x) for ae, x in zip(self.autoencoders, xs)]

    def autoencoder_parameters(self):
        return self.autoencoders.parameters()


def encode(ae: ViewAutoencoder, x: Tensor) -> Tensor:
    return ae.encode(x)


def decode(ae: ViewAutoencoder, z: Tensor) -> Tensor:
    return ae.decode(z)


def reconstruction_loss(xs: Sequence[Tensor], xs_hat: Sequence[Tensor]) -> Tensor:
    """Sum over views of the squared Frobenius reconstruction error."""
    if len(xs) != len(xs_hat):
        raise ShapeMismatch(f"{len(xs)} inputs but {len(xs_hat)} reconstructions")
    total = None
    for v, (x, xh) in enumerate(zip(xs, xs_hat)):
        if x.shape != xh.shape:
            raise ShapeMismatch(f"view {v}: input {tuple(x.shape)} vs reconstruction {tuple(xh.shape)}")
        err = ((x - xh) ** 2).sum()
        total = err if total is None else total + err
    return total


def classify(head: ClassificationHead, z: Tensor) -> Tensor:
    return head(z)


def as_tensor(x, dtype=DTYPE) -> Tensor:
    if isinstance(x, Tensor):
        return x.to(dtype)
    return torch.as_tensor(x, dtype=dtype)

