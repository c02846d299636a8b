import copy
import math

import numpy as np
import pytest
import torch

from dealmvc.dataset import MultiViewDataset, generate_synthetic, normalize_views
from dealmvc.errors import DegenerateWeights, InvalidInput, NonFiniteLoss, ShapeMismatch, UntrainedModel
from dealmvc.networks import DealMVC
from dealmvc.trainer import (
    TrainConfig,
    TrainHistory,
    batch_graphs,
    batch_losses,
    build_model,
    init_head,
    predict_clusters,
    predict_proba,
    pretrain,
    reconstruction_error,
    train,
    view_tensors,
)


@pytest.fixture(scope="module")
def syn():
    return normalize_views(generate_synthetic(3, 600, [8, 12], 6, 1, 0))


@pytest.fixture(scope="module")
def small():
    return normalize_views(generate_synthetic(3, 60, [4, 5], 6, 1, 1))


def small_cfg(**kw):
    base = dict(pretrain_epochs=2, train_epochs=2, batch_size=16, embed_dim=8, hidden=(16,), deterministic=True)
    base.update(kw)
    return TrainConfig(**base)


def params_equal(a, b):
    return all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))


# config


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.learning_rate, cfg.pretrain_epochs, cfg.train_epochs) == (256, 3e-4, 300, 100)
    assert (cfg.alpha, cfg.beta, cfg.mu, cfg.embed_dim) == (1.0, 1.0, 1.0, 128)


@pytest.mark.parametrize(
    "bad", [dict(pretrain_epochs=-1), dict(learning_rate=0), dict(alpha=-1), dict(tau=0.0), dict(tau=1.0), dict(batch_size=1)]
)
def test_config_validation(bad):
    with pytest.raises(InvalidInput):
        TrainConfig(**bad)


def test_ablation_switches():
    cfg = TrainConfig().ablated("local", "consistency")
    assert cfg.disable_local and cfg.disable_consistency and not cfg.disable_global
    assert cfg.weights() == (0.0, 1.0, 0.0)
    with pytest.raises(InvalidInput):
        TrainConfig().ablated("nope")


def test_config_dict_round_trip():
    cfg = TrainConfig(alpha=0.3, hidden=(7, 3), seed=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidInput):
        TrainConfig.from_dict({"bogus": 1})


# pretraining


def test_zero_epoch_pretrain_is_fresh_init(small):
    cfg = small_cfg(pretrain_epochs=0)
    assert params_equal(pretrain(small, cfg), build_model(small, cfg))


def test_pretrain_deterministic(small):
    cfg = small_cfg(pretrain_epochs=3)
    assert params_equal(pretrain(small, cfg), pretrain(small, cfg))


def test_pretrain_decreases_reconstruction(syn):
    cfg = TrainConfig(pretrain_epochs=50, seed=0)
    losses = []
    fresh = build_model(syn, cfg)
    before = reconstruction_error(fresh, syn)
    model = pretrain(syn, cfg, model=fresh, on_epoch=lambda e, l: losses.append(l))
    assert len(losses) == 50
    assert reconstruction_error(model, syn) < before
    assert losses[-1] < losses[0]
    assert np.median(losses[-10:]) < np.median(losses[:10])


def test_pretrain_only_touches_autoencoders(small):
    cfg = small_cfg(pretrain_epochs=2)
    fresh = build_model(small, cfg)
    model = pretrain(small, cfg, model=copy.deepcopy(fresh))
    assert torch.equal(model.head.linear.weight, fresh.head.linear.weight)
    assert torch.equal(model.attention.ffn[0].weight, fresh.attention.ffn[0].weight)
    assert not torch.equal(model.autoencoders[0].encoder[0].weight, fresh.autoencoders[0].encoder[0].weight)


def test_pretrain_diverges_loudly():
    x = np.full((8, 2), 1e200)
    ds = MultiViewDataset((x, x), np.array([0, 1] * 4))
    with pytest.raises(NonFiniteLoss):
        pretrain(ds, small_cfg(normalize="none"))


# joint training


def test_history_shape_and_finiteness(small):
    cfg = small_cfg(train_epochs=3)
    model, hist = train(pretrain(small, cfg), small, cfg)
    assert isinstance(hist, TrainHistory) and len(hist) == 3
    for name in ("l_rec", "l_local", "l_global", "l_con", "l_total"):
        assert np.all(np.isfinite(hist.column(name)))
    assert hist.header()[:6] == ["epoch", "l_rec", "l_local", "l_global", "l_con", "l_total"]
    assert bool(model.head_ready)
    assert int(model.t) == 3 * 4  # 60 samples / 16 -> 4 batches per epoch


def test_everything_off_is_autoencoder_training(small):
    cfg = small_cfg(alpha=0, beta=0, mu=0, train_epochs=3).ablated(
        "local", "global", "consistency", "sampling", "attention"
    )
    _, hist = train(pretrain(small, cfg), small, cfg)
    assert np.array_equal(hist.column("l_total"), hist.column("l_rec"))


def test_disable_local_omits_term(small):
    cfg = small_cfg().ablated("local")
    _, hist = train(pretrain(small, cfg), small, cfg)
    assert np.all(hist.column("alpha") == 0)
    expected = hist.column("l_rec") + hist.column("l_global") + hist.column("l_con")
    assert np.allclose(hist.column("l_total"), expected, rtol=0, atol=1e-9)


def test_loss_composition_every_step(small):
    cfg = small_cfg(alpha=0.7, beta=1.3, mu=0.4)
    steps = []
    train(pretrain(small, cfg), small, cfg, on_step=steps.append)
    assert len(steps) == 8
    for out in steps:
        rebuilt = out["l_rec"] + 0.7 * out["l_local"] + 1.3 * out["l_global"] + 0.4 * out["l_con"]
        assert out["l_total"].item() == rebuilt.item()


def _grad_norm(model, xs, cfg):
    model.zero_grad()
    batch_losses(model, xs, cfg)["l_total"].backward()
    return torch.sqrt(sum((p.grad ** 2).sum() for p in model.parameters() if p.grad is not None)).item()


def test_disabled_global_matches_zero_beta(small):
    cfg = small_cfg()
    base = pretrain(small, cfg)
    init_head(base, small, cfg)
    xs = view_tensors([x[:16] for x in small.views])
    a = _grad_norm(copy.deepcopy(base), xs, cfg.ablated("global"))
    b = _grad_norm(copy.deepcopy(base), xs, cfg.replace(beta=0.0))
    c = _grad_norm(copy.deepcopy(base), xs, cfg)
    assert a == b
    assert a != c


def test_training_is_deterministic(small):
    cfg = small_cfg(train_epochs=3)
    pre = pretrain(small, cfg)
    _, h1 = train(copy.deepcopy(pre), small, cfg)
    _, h2 = train(copy.deepcopy(pre), small, cfg)
    for name in ("l_rec", "l_local", "l_global", "l_con", "l_total", "w", "a", "q"):
        assert np.max(np.abs(h1.column(name) - h2.column(name))) <= 1e-10


def test_fusion_weights_stay_distributions(small):
    cfg = small_cfg(train_epochs=3)
    _, hist = train(pretrain(small, cfg), small, cfg)
    for key in ("w", "a", "q"):
        col = hist.column(key)
        assert np.all(col >= 0) and np.allclose(col.sum(axis=1), 1, atol=1e-6)


def test_train_rejects_incompatible_dataset(small):
    other = normalize_views(generate_synthetic(3, 60, [4, 6], seed=0))
    model = pretrain(small, small_cfg())
    with pytest.raises(ShapeMismatch):
        train(model, other, small_cfg())


def test_degenerate_weights_propagate(small):
    cfg = small_cfg()
    model = pretrain(small, cfg)
    init_head(model, small, cfg)
    with torch.no_grad():
        model.w.zero_()
    with pytest.raises(DegenerateWeights):
        train(model, small, cfg)


# assignment


def _identity_model(k):
    m = DealMVC([k, k], k, embed_dim=k, hidden=())
    with torch.no_grad():
        for ae in m.autoencoders:
            ae.encoder[0].weight.copy_(torch.eye(k, dtype=torch.float64))
            ae.encoder[0].bias.zero_()
        m.head.linear.weight.copy_(torch.eye(k, dtype=torch.float64))
        m.head.linear.bias.zero_()
        m.head_ready.fill_(True)
    return m


def test_argmax_assignment_examples():
    m = _identity_model(2)
    logp = np.log(np.array([[0.6, 0.4], [0.3, 0.7]]))
    ds = MultiViewDataset((logp, logp))
    assert np.allclose(predict_proba(m, ds), [[0.6, 0.4], [0.3, 0.7]])
    assert predict_clusters(m, ds).tolist() == [0, 1]

    m3 = _identity_model(3)
    onehot_logits = np.tile([0.0, 0.0, 60.0], (5, 1))
    ds3 = MultiViewDataset((onehot_logits, onehot_logits))
    assert predict_clusters(m3, ds3).tolist() == [2] * 5


def test_untrained_head_refused(small):
    model = pretrain(small, small_cfg())
    with pytest.raises(UntrainedModel):
        predict_clusters(model, small)
    # k-means assignment does not need the head
    assert len(predict_clusters(model, small, "kmeans")) == small.n_samples


def test_assignment_deterministic(small):
    cfg = small_cfg()
    model, _ = train(pretrain(small, cfg), small, cfg)
    assert np.array_equal(predict_clusters(model, small), predict_clusters(model, small))
    assert np.array_equal(predict_clusters(model, small, "kmeans", 3), predict_clusters(model, small, "kmeans", 3))
    with pytest.raises(InvalidInput):
        predict_clusters(model, small, "nearest")


def test_batch_graphs_keys(small):
    cfg = small_cfg()
    model, _ = train(pretrain(small, cfg), small, cfg)
    graphs = batch_graphs(model, small, cfg)
    assert sorted(graphs) == ["S_01", "S_G", "W_01", "W_G"]
    assert graphs["W_G"].shape == (16, 16)
    assert np.all(np.diag(graphs["W_G"]) == 1)
    assert not math.isnan(graphs["S_01"].sum())
