"""Two-stage training: autoencoder pretraining on the reconstruction loss,
then joint training on reconstruction + local/global calibration +
pseudo-label consistency, plus cluster assignment for a trained model.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from sklearn.cluster import KMeans
from sklearn.linear_model import LogisticRegression

from .calibration import (
    calibration_loss,
    feature_similarity_graph,
    label_consistency_loss,
    local_graphs,
    pseudo_label_graph,
    sum_pair_losses,
    total_loss,
    view_pairs,
)
from .dataset import MultiViewDataset, batch_iter
from .errors import InvalidInput, NonFiniteLoss, ShapeMismatch, TooFewViews, UntrainedModel
from .fusion import FusionState, adaptive_fusion, global_embedding
from .networks import DTYPE, DealMVC, reconstruction_loss

log = logging.getLogger(__name__)

ABLATIONS = {
    "local": "disable_local",
    "global": "disable_global",
    "consistency": "disable_consistency",
    "sampling": "disable_sampling_net",
    "attention": "disable_attention",
}
ASSIGN_RULES = ("argmax", "kmeans")
HEAD_INITS = ("kmeans", "random")


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 3e-4
    pretrain_epochs: int = 300
    train_epochs: int = 100
    alpha: float = 1.0
    beta: float = 1.0
    mu: float = 1.0
    tau: float = 0.5
    embed_dim: int = 128
    hidden: tuple = (512, 256)
    n_clusters: Optional[int] = None
    seed: int = 0
    normalize: str = "minmax"
    head_init: str = "kmeans"
    head_c: float = 1.0
    assign: str = "argmax"
    disable_local: bool = False
    disable_global: bool = False
    disable_consistency: bool = False
    disable_sampling_net: bool = False
    disable_attention: bool = False
    deterministic: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 2:
            raise InvalidInput(f"batch_size must be >= 2, got {self.batch_size}")
        if self.pretrain_epochs < 0 or self.train_epochs < 0:
            raise InvalidInput("epoch counts must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidInput(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("alpha", "beta", "mu"):
            if not getattr(self, name) >= 0:
                raise InvalidInput(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0 < self.tau < 1:
            raise InvalidInput(f"tau must lie in (0, 1), got {self.tau}")
        if self.embed_dim < 1:
            raise InvalidInput(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.n_clusters is not None and self.n_clusters < 2:
            raise InvalidInput(f"n_clusters must be >= 2, got {self.n_clusters}")
        if self.assign not in ASSIGN_RULES:
            raise InvalidInput(f"assign must be one of {ASSIGN_RULES}, got {self.assign!r}")
        if self.head_init not in HEAD_INITS:
            raise InvalidInput(f"head_init must be one of {HEAD_INITS}, got {self.head_init!r}")

    def weights(self) -> tuple:
        """(alpha, beta, mu) after applying the ablation switches."""
        return (
            0.0 if self.disable_local else float(self.alpha),
            0.0 if self.disable_global else float(self.beta),
            0.0 if self.disable_consistency else float(self.mu),
        )

    def ablated(self, *names: str) -> "TrainConfig":
        """Copy with the named ablations switched on (``local``, ``global``, ...)."""
        changes = {}
        for n in names:
            if n not in ABLATIONS:
                raise InvalidInput(f"unknown ablation {n!r}; choose from {sorted(ABLATIONS)}")
            changes[ABLATIONS[n]] = True
        return self.replace(**changes)

    def replace(self, **changes) -> "TrainConfig":
        d = asdict(self)
        d.update(changes)
        return TrainConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    l_rec: float
    l_local: float
    l_global: float
    l_con: float
    l_total: float
    alpha: float
    beta: float
    mu: float
    w: list
    a: list
    q: list


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def header(self) -> list:
        V = len(self.records[0].w) if self.records else 0
        base = ["epoch", "l_rec", "l_local", "l_global", "l_con", "l_total", "alpha", "beta", "mu"]
        return base + [f"{k}_{v}" for k in ("w", "a", "q") for v in range(V)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header())
            for r in self.records:
                writer.writerow(
                    [r.epoch]
                    + [repr(float(x)) for x in (r.l_rec, r.l_local, r.l_global, r.l_con, r.l_total, r.alpha, r.beta, r.mu)]
                    + [repr(float(x)) for x in (*r.w, *r.a, *r.q)]
                )


# ---------------------------------------------------------------------------
# helpers


def configure_determinism(cfg: TrainConfig) -> None:
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def view_tensors(views: Sequence[np.ndarray]) -> list:
    return [torch.tensor(np.asarray(x), dtype=DTYPE) for x in views]


def resolve_clusters(ds: MultiViewDataset, cfg: TrainConfig) -> int:
    k = cfg.n_clusters if cfg.n_clusters is not None else ds.n_clusters
    if k is None:
        raise InvalidInput("n_clusters must be configured for an unlabelled dataset")
    return int(k)


def build_model(ds: MultiViewDataset, cfg: TrainConfig) -> DealMVC:
    if ds.n_views < 2:
        raise TooFewViews(f"training needs at least two views, got {ds.n_views}")
    return DealMVC(
        ds.dims,
        resolve_clusters(ds, cfg),
        embed_dim=cfg.embed_dim,
        hidden=cfg.hidden,
        seed=cfg.seed,
    )


def _check_compatible(model: DealMVC, ds: MultiViewDataset) -> None:
    if model.dims != ds.dims:
        raise ShapeMismatch(f"model expects view widths {model.dims}, dataset has {ds.dims}")


def _epoch_batches(ds, cfg, stage: int, epoch: int):
    return batch_iter(ds, cfg.batch_size, shuffle=True, seed=[cfg.seed, stage, epoch])


def _finite(value: torch.Tensor, what: str) -> None:
    if not torch.isfinite(value).all():
        raise NonFiniteLoss(f"{what} became non-finite")


def reconstruction_error(model: DealMVC, ds: MultiViewDataset) -> float:
    """Reconstruction loss over the whole dataset in one pass."""
    xs = view_tensors(ds.views)
    with torch.no_grad():
        zs = model.encode_all(xs)
        xh = [model.decode(v, z) for v, z in enumerate(zs)]
        return float(reconstruction_loss(xs, xh))


# ---------------------------------------------------------------------------
# stage 1


def pretrain(
    ds: MultiViewDataset,
    cfg: TrainConfig,
    model: Optional[DealMVC] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> DealMVC:
    """Train the autoencoders alone on the summed reconstruction loss.

    ``on_epoch(epoch, mean_batch_loss)`` is called after every epoch.
    """
    configure_determinism(cfg)
    if model is None:
        model = build_model(ds, cfg)
    _check_compatible(model, ds)
    if cfg.pretrain_epochs == 0:
        return model
    opt = torch.optim.Adam(model.autoencoder_parameters(), lr=cfg.learning_rate)
    for epoch in range(cfg.pretrain_epochs):
        losses = []
        for batch in _epoch_batches(ds, cfg, 0, epoch):
            xs = view_tensors(batch.views)
            zs = model.encode_all(xs)
            xh = [model.decode(v, z) for v, z in enumerate(zs)]
            loss = reconstruction_loss(xs, xh)
            _finite(loss, "reconstruction loss")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        mean = float(np.mean(losses))
        if on_epoch is not None:
            on_epoch(epoch, mean)
        if epoch % 50 == 0 or epoch == cfg.pretrain_epochs - 1:
            log.info("pretrain epoch %d  L_R=%.5f", epoch, mean)
    return model


# ---------------------------------------------------------------------------
# stage 2


def init_head(model: DealMVC, ds: MultiViewDataset, cfg: TrainConfig) -> None:
    """Initialise the classification head for the contrastive stage.

    ``kmeans``: cluster the fused embedding with k-means, then fit a
    multinomial logistic regression from the fused and every per-view
    embedding to those cluster ids and load its coefficients into the head.
    The shared head then gives confident, view-consistent pseudo-labels from
    the first step. ``random``: keep the seeded initialisation.
    """
    if cfg.head_init == "kmeans":
        zs, zg = embed(model, ds)
        targets = KMeans(model.n_clusters, n_init=10, random_state=cfg.seed).fit_predict(zg)
        X = np.vstack([zg, *zs])
        y = np.tile(targets, len(zs) + 1)
        clf = LogisticRegression(C=cfg.head_c, max_iter=2000).fit(X, y)
        weight = torch.as_tensor(clf.coef_, dtype=DTYPE)
        bias = torch.as_tensor(clf.intercept_, dtype=DTYPE)
        with torch.no_grad():
            model.head.linear.weight.copy_(weight)
            model.head.linear.bias.copy_(bias)
    with torch.no_grad():
        model.head_ready.fill_(True)


def batch_losses(model: DealMVC, xs: Sequence[torch.Tensor], cfg: TrainConfig, targets=None) -> dict:
    """Forward pass for one batch; advances the fusion state by one step.

    Returns the four loss components and their weighted total as tensors,
    plus the pseudo-label graphs under ``W_G`` and ``W_pairs``. Passing a
    previous result's graphs as ``targets`` pins the calibration targets
    (the consistency term still uses the live graphs); this is how the
    stop-gradient on the targets is checked against finite differences.
    """
    zs = model.encode_all(xs)
    xh = [model.decode(v, z) for v, z in enumerate(zs)]
    l_rec = reconstruction_loss(xs, xh)

    zg = adaptive_fusion(
        model, zs, use_attention=not cfg.disable_attention, use_sampling=not cfg.disable_sampling_net
    )
    pg = model.head(zg)
    ps = [model.head(z) for z in zs]

    W_g = pseudo_label_graph(pg, pg, cfg.tau, differentiable=True)
    S_g = feature_similarity_graph(zg, zg)
    pairs = local_graphs(zs, ps, cfg.tau, differentiable=True)

    W_pairs = [W for W, _ in pairs]
    if targets is None:
        cal_g, cal_pairs = W_g, W_pairs
    else:
        cal_g, cal_pairs = targets["W_G"], targets["W_pairs"]
    l_global = calibration_loss(cal_g, S_g)
    l_local = sum_pair_losses([(W, S) for W, (_, S) in zip(cal_pairs, pairs)])
    l_con = label_consistency_loss(W_g, W_pairs)
    alpha, beta, mu = cfg.weights()
    l_total = total_loss(l_rec, l_local, l_global, l_con, alpha, beta, mu)
    return {
        "l_rec": l_rec, "l_local": l_local, "l_global": l_global, "l_con": l_con, "l_total": l_total,
        "W_G": W_g.detach(), "W_pairs": [W.detach() for W in W_pairs],
    }


def train(
    model: DealMVC,
    ds: MultiViewDataset,
    cfg: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    on_step: Optional[Callable[[dict], None]] = None,
):
    """Joint training; returns ``(model, history)``.

    ``on_step`` receives the per-batch loss dict (tensors) before the
    optimizer step, ``on_epoch`` each finished :class:`EpochRecord`.
    """
    configure_determinism(cfg)
    _check_compatible(model, ds)
    if ds.n_views < 2:
        raise TooFewViews(f"training needs at least two views, got {ds.n_views}")
    if not bool(model.head_ready):
        init_head(model, ds, cfg)
    history = TrainHistory()
    alpha, beta, mu = cfg.weights()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    for epoch in range(cfg.train_epochs):
        sums = {"l_rec": 0.0, "l_local": 0.0, "l_global": 0.0, "l_con": 0.0}
        n_batches = 0
        for batch in _epoch_batches(ds, cfg, 1, epoch):
            xs = view_tensors(batch.views)
            out = batch_losses(model, xs, cfg)
            if on_step is not None:
                on_step(out)
            log.debug("epoch %d batch %d  L=%.6f", epoch, n_batches, out["l_total"].item())
            opt.zero_grad()
            out["l_total"].backward()
            opt.step()
            for k in sums:
                sums[k] += out[k].item()
            n_batches += 1
        means = {k: v / n_batches for k, v in sums.items()}
        l_total = float(total_loss(means["l_rec"], means["l_local"], means["l_global"], means["l_con"], alpha, beta, mu))
        state = FusionState.from_model(model)
        rec = EpochRecord(
            epoch, means["l_rec"], means["l_local"], means["l_global"], means["l_con"], l_total,
            alpha, beta, mu, state.w.tolist(), state.a.tolist(), state.q.tolist(),
        )
        history.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if epoch % 10 == 0 or epoch == cfg.train_epochs - 1:
            log.info(
                "train epoch %d  L=%.5f  L_R=%.5f  L_local=%.5f  L_global=%.5f  L_con=%.5f",
                epoch, l_total, means["l_rec"], means["l_local"], means["l_global"], means["l_con"],
            )
    return model, history


# ---------------------------------------------------------------------------
# inference


def embed(model: DealMVC, ds: MultiViewDataset):
    """Per-view embeddings and the fused embedding over the whole dataset (numpy)."""
    _check_compatible(model, ds)
    with torch.no_grad():
        zs = model.encode_all(view_tensors(ds.views))
        zg = global_embedding(model, zs)
    return [z.numpy() for z in zs], zg.numpy()


def predict_proba(model: DealMVC, ds: MultiViewDataset) -> np.ndarray:
    if not bool(model.head_ready):
        raise UntrainedModel("classification head has not been initialised; run train() first")
    _, zg = embed(model, ds)
    with torch.no_grad():
        return model.head(torch.as_tensor(zg, dtype=DTYPE)).numpy()


def predict_clusters(model: DealMVC, ds: MultiViewDataset, assign: str = "argmax", seed: int = 0) -> np.ndarray:
    """Cluster ids per sample: argmax of the head on the fused embedding, or
    k-means on the fused embedding."""
    if assign == "argmax":
        return predict_proba(model, ds).argmax(axis=1)
    if assign == "kmeans":
        _, zg = embed(model, ds)
        return KMeans(model.n_clusters, n_init=10, random_state=seed).fit_predict(zg)
    raise InvalidInput(f"assign must be one of {ASSIGN_RULES}, got {assign!r}")


def batch_graphs(model: DealMVC, ds: MultiViewDataset, cfg: TrainConfig, indices=None) -> dict:
    """Global and local (W, S) graphs of one batch under the current model,
    keyed ``W_G``, ``S_G``, ``W_<m><n>``, ``S_<m><n>``. No state is updated."""
    if indices is None:
        indices = np.arange(min(cfg.batch_size, ds.n_samples))
    xs = view_tensors([x[indices] for x in ds.views])
    with torch.no_grad():
        zs = model.encode_all(xs)
        zg = global_embedding(model, zs)
        pg = model.head(zg)
        ps = [model.head(z) for z in zs]
        out = {
            "W_G": pseudo_label_graph(pg, pg, cfg.tau),
            "S_G": feature_similarity_graph(zg, zg),
        }
        for (m, n), (W, S) in zip(view_pairs(len(zs)), local_graphs(zs, ps, cfg.tau)):
            out[f"W_{m}{n}"] = W
            out[f"S_{m}{n}"] = S
    return {k: v.numpy() for k, v in out.items()}


def dump_graphs(model: DealMVC, ds: MultiViewDataset, cfg: TrainConfig, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, mat in batch_graphs(model, ds, cfg).items():
        p = out / f"{key}.csv"
        np.savetxt(p, mat, fmt="%.17g", delimiter=",")
        paths.append(p)
    return paths
