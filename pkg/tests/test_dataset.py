import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.cluster import KMeans

from dealmvc.dataset import (
    KNOWN_DATASETS,
    MultiViewDataset,
    batch_iter,
    generate_synthetic,
    latent_centers,
    load_dataset,
    normalize_views,
    save_dataset,
)
from dealmvc.errors import (
    BatchTooSmall,
    DataError,
    EmptyView,
    InvalidShape,
    LabelOutOfRange,
    MismatchedRows,
    MissingDataset,
)
from dealmvc.metrics import clustering_accuracy


def write_views(tmp_path, views, labels=None, name=None):
    lines = [] if name is None else [f"name={name}"]
    for v, x in enumerate(views):
        np.savetxt(tmp_path / f"v{v}.csv", x, delimiter=",")
        lines.append(f"view.{v}.path=v{v}.csv")
    if labels is not None:
        np.savetxt(tmp_path / "y.txt", labels, fmt="%d")
        lines.append("labels.path=y.txt")
    (tmp_path / "manifest.txt").write_text("\n".join(lines) + "\n")
    return tmp_path / "manifest.txt"


def test_bbcsport_shaped_manifest(tmp_path):
    rng = np.random.default_rng(0)
    y = np.arange(544) % 5
    path = write_views(tmp_path, [rng.random((544, 7)), rng.random((544, 4))], y, name="BBCSport")
    ds = load_dataset(path)
    assert (ds.n_samples, ds.n_views, ds.n_clusters) == (544, 2, 5)
    assert KNOWN_DATASETS["bbcsport"] == (544, 5, 2)


def test_known_name_with_wrong_shape_rejected(tmp_path):
    rng = np.random.default_rng(0)
    path = write_views(tmp_path, [rng.random((100, 3)), rng.random((100, 3))], np.arange(100) % 5, name="bbcsport")
    with pytest.raises(InvalidShape):
        load_dataset(path)


def test_minimal_dataset(tmp_path):
    ds = load_dataset(write_views(tmp_path, [np.zeros((1, 1)), np.zeros((1, 1))]))
    assert ds.n_samples == 1 and ds.n_views == 2 and ds.labels is None


def test_mismatched_rows(tmp_path):
    with pytest.raises(MismatchedRows):
        load_dataset(write_views(tmp_path, [np.zeros((10, 2)), np.zeros((9, 2))]))


def test_load_errors(tmp_path):
    with pytest.raises(MissingDataset):
        load_dataset(tmp_path / "nope")
    (tmp_path / "v0.csv").write_text("")
    (tmp_path / "v1.csv").write_text("1,2\n")
    (tmp_path / "manifest.txt").write_text("view.0.path=v0.csv\nview.1.path=v1.csv\n")
    with pytest.raises(EmptyView):
        load_dataset(tmp_path)
    (tmp_path / "v0.csv").write_text("1,abc\n")
    with pytest.raises(DataError):
        load_dataset(tmp_path)
    (tmp_path / "manifest.txt").write_text("view.0.path=v1.csv\n")
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_label_checks():
    x = np.zeros((4, 2))
    with pytest.raises(LabelOutOfRange):
        MultiViewDataset((x, x), np.array([0, 0, 2, 2]))
    with pytest.raises(LabelOutOfRange):
        MultiViewDataset((x, x), np.array([-1, 0, 1, 1]))
    with pytest.raises(MismatchedRows):
        MultiViewDataset((x, x), np.array([0, 1, 1]))
    ds = MultiViewDataset((x, x), np.array([1, 0, 1, 0]))
    assert ds.n_clusters == 2


def test_dataset_is_read_only():
    ds = MultiViewDataset((np.zeros((2, 2)), np.ones((2, 3))))
    with pytest.raises(ValueError):
        ds.views[0][0, 0] = 1.0


def test_save_load_round_trip_is_exact(tmp_path):
    ds = generate_synthetic(3, 30, [4, 5], seed=2)
    save_dataset(ds, tmp_path / "a")
    back = load_dataset(tmp_path / "a")
    assert all(np.array_equal(x, y) for x, y in zip(ds.views, back.views))
    assert np.array_equal(ds.labels, back.labels)
    save_dataset(ds, tmp_path / "b")
    for f in ("view0.csv", "view1.csv", "labels.txt", "manifest.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synthetic_shapes_and_determinism():
    a = generate_synthetic(3, 600, [8, 12], 6, 1, 0)
    b = generate_synthetic(3, 600, [8, 12], 6, 1, 0)
    assert a.dims == [8, 12] and a.n_samples == 600 and a.n_clusters == 3
    assert all(np.array_equal(x, y) for x, y in zip(a.views, b.views))
    assert np.array_equal(a.labels, b.labels)
    assert np.bincount(a.labels).tolist() == [200, 200, 200]


def test_synthetic_minimal_case():
    ds = generate_synthetic(2, 2, [1, 1], separation=0, noise=1, seed=0)
    assert ds.n_samples == 2 and sorted(ds.labels.tolist()) == [0, 1]


@pytest.mark.parametrize("args", [(2, 1, [3, 3]), (1, 5, [3, 3]), (3, 10, [0, 2]), (3, 10, [])])
def test_synthetic_rejects_bad_shape(args):
    with pytest.raises(InvalidShape):
        generate_synthetic(*args)


def test_synthetic_single_view_kmeans_clusters():
    # Measured once with this k-means configuration: 0.98667 and 0.985.
    ds = generate_synthetic(3, 600, [8, 12], 6, 1, 0)
    accs = [clustering_accuracy(KMeans(3, n_init=10, random_state=0).fit_predict(x), ds.labels) for x in ds.views]
    assert accs == pytest.approx([0.986667, 0.985], abs=1e-5)
    assert min(accs) > 0.9


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_synthetic_concatenated_kmeans_clusters(seed):
    ds = generate_synthetic(3, 600, [8, 12], 6, 1, seed)
    pred = KMeans(3, n_init=10, random_state=0).fit_predict(np.hstack(ds.views))
    assert clustering_accuracy(pred, ds.labels) >= 0.9


@pytest.mark.parametrize("K,sep,noise", [(2, 6.0, 1.0), (3, 6.0, 0.5), (5, 2.0, 3.0), (10, 0.0, 1.0)])
def test_latent_centers_equidistant(K, sep, noise):
    c = latent_centers(np.random.default_rng(4), K, sep, noise)
    for i in range(K):
        for j in range(i + 1, K):
            assert np.linalg.norm(c[i] - c[j]) == pytest.approx(sep * noise, abs=1e-9)


def test_normalize_examples():
    x = np.array([[0.0, 3.0], [5.0, 3.0], [10.0, 3.0]])
    ds = MultiViewDataset((x, x))
    mm = normalize_views(ds, "minmax")
    assert mm.views[0][:, 0].tolist() == [0.0, 0.5, 1.0]
    assert mm.views[0][:, 1].tolist() == [0.0, 0.0, 0.0]
    z = normalize_views(ds, "zscore")
    assert z.views[0][:, 1].tolist() == [0.0, 0.0, 0.0]
    assert z.views[0][:, 0].mean() == pytest.approx(0.0) and z.views[0][:, 0].std() == pytest.approx(1.0)
    assert normalize_views(ds, "none") is ds


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 20), st.integers(1, 5))
def test_minmax_idempotent(seed, n, d):
    rng = np.random.default_rng(seed)
    ds = MultiViewDataset((rng.standard_normal((n, d)) * 100, rng.random((n, d))))
    once = normalize_views(ds, "minmax")
    twice = normalize_views(once, "minmax")
    for a, b in zip(once.views, twice.views):
        assert np.max(np.abs(a - b)) <= 1e-12
        assert a.min() >= 0 and a.max() <= 1


def test_batches_no_shuffle():
    ds = MultiViewDataset((np.arange(10.0).reshape(10, 1), np.zeros((10, 1))))
    batches = batch_iter(ds, 4, shuffle=False)
    assert [b.indices.tolist() for b in batches] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
    assert batches[1].views[0].ravel().tolist() == [4.0, 5.0, 6.0, 7.0]


def test_trailing_singleton_merged():
    ds = MultiViewDataset((np.zeros((9, 1)), np.zeros((9, 1))))
    assert [len(b) for b in batch_iter(ds, 4, shuffle=False)] == [4, 5]


def test_shuffled_batches_reproducible():
    ds = generate_synthetic(3, 600, [2, 2], seed=0)
    a = batch_iter(ds, 256, seed=11)
    b = batch_iter(ds, 256, seed=11)
    assert [x.indices.tolist() for x in a] == [x.indices.tolist() for x in b]


def test_batch_too_small():
    ds = MultiViewDataset((np.zeros((5, 1)), np.zeros((5, 1))))
    with pytest.raises(BatchTooSmall):
        batch_iter(ds, 1)
    with pytest.raises(BatchTooSmall):
        batch_iter(MultiViewDataset((np.zeros((1, 1)), np.zeros((1, 1)))), 4)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 300), st.integers(2, 64), st.integers(0, 2**32 - 1), st.booleans())
def test_partition_property(n, bs, seed, shuffle):
    ds = MultiViewDataset((np.zeros((n, 1)), np.zeros((n, 1))))
    batches = batch_iter(ds, bs, shuffle=shuffle, seed=seed)
    idx = np.concatenate([b.indices for b in batches])
    assert sorted(idx.tolist()) == list(range(n))
    assert all(len(b) >= 2 for b in batches)
    assert all(len(b) <= bs + 1 for b in batches)


def test_subset_keeps_alignment():
    ds = generate_synthetic(2, 10, [2, 3], seed=1)
    sub = ds.subset([0, 2, 4, 6, 8, 1])
    assert np.array_equal(sub.views[1], ds.views[1][[0, 2, 4, 6, 8, 1]])


def test_saved_files_hash_stable(tmp_path):
    ds = generate_synthetic(3, 20, [2, 2], seed=0)
    save_dataset(ds, tmp_path)
    h = hashlib.sha256((tmp_path / "view0.csv").read_bytes()).hexdigest()
    save_dataset(generate_synthetic(3, 20, [2, 2], seed=0), tmp_path)
    assert hashlib.sha256((tmp_path / "view0.csv").read_bytes()).hexdigest() == h
