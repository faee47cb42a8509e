import gzip
import os
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from callosity.datasets import (
    LabeledDataset,
    SplitSpec,
    alpha_filter,
    load_manifest,
    load_mnist,
    load_mnist_dir,
    read_idx_images,
    read_idx_labels,
    split,
    split_indices,
    stratified_subsample,
)
from callosity.errors import ConfigError, DataError


def write_idx(tmp_path, pixels, labels, gz=False):
    img = struct.pack(">IIII", 2051, *pixels.shape) + pixels.astype(np.uint8).tobytes()
    lab = struct.pack(">II", 2049, len(labels)) + np.asarray(labels, np.uint8).tobytes()
    ip, lp = tmp_path / "imgs", tmp_path / "labs"
    if gz:
        img, lab = gzip.compress(img), gzip.compress(lab)
        ip, lp = tmp_path / "imgs.gz", tmp_path / "labs.gz"
    ip.write_bytes(img)
    lp.write_bytes(lab)
    return ip, lp


def toy(labels):
    labels = np.asarray(labels)
    return LabeledDataset(ids=tuple(f"s{i}" for i in range(len(labels))), labels=labels,
                          classes=tuple(f"c{i}" for i in range(labels.max() + 1)))


# -- IDX -------------------------------------------------------------------------

@pytest.mark.parametrize("gz", [False, True])
def test_idx_round_trip(tmp_path, gz):
    pixels = np.arange(3 * 4 * 5).reshape(3, 4, 5) % 256
    ip, lp = write_idx(tmp_path, pixels, [7, 0, 9], gz)
    ds = load_mnist(ip, lp)
    assert len(ds) == 3 and ds.images.shape == (3, 4, 5, 1)
    np.testing.assert_array_equal(ds.labels, [7, 0, 9])
    np.testing.assert_allclose(ds.images[..., 0], pixels / 255.0, rtol=1e-6)
    assert ds.images.min() >= 0 and ds.images.max() <= 1


def test_idx_bad_magic(tmp_path):
    ip, lp = write_idx(tmp_path, np.zeros((1, 2, 2)), [1])
    ip.write_bytes(struct.pack(">I", 1234) + ip.read_bytes()[4:])
    with pytest.raises(DataError, match="magic"):
        read_idx_images(ip)
    with pytest.raises(DataError, match="magic"):
        read_idx_labels(ip)


def test_idx_truncated(tmp_path):
    ip, lp = write_idx(tmp_path, np.zeros((2, 3, 3)), [1, 2])
    ip.write_bytes(ip.read_bytes()[:-1])
    with pytest.raises(DataError, match="expected"):
        read_idx_images(ip)
    lp.write_bytes(lp.read_bytes()[:5])
    with pytest.raises(DataError, match="truncated"):
        read_idx_labels(lp)


def test_idx_count_mismatch(tmp_path):
    ip, lp = write_idx(tmp_path, np.zeros((2, 3, 3)), [1, 2, 3])
    with pytest.raises(DataError, match="2 images but 3 labels"):
        load_mnist(ip, lp)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        read_idx_labels(tmp_path / "nope")
    with pytest.raises(DataError, match="missing MNIST"):
        load_mnist_dir(tmp_path)


def test_real_mnist_counts(mnist_root):
    train = load_mnist_dir(mnist_root, "train")
    test = load_mnist_dir(mnist_root, "test")
    assert len(train) == 60000 and len(test) == 10000
    assert train.images.shape[1:] == (28, 28, 1)
    assert set(np.unique(train.labels)) == set(range(10))


# -- manifests -----------------------------------------------------------------------

def test_manifest_classes(tmp_path):
    (tmp_path / "m.csv").write_text("filename,label\na.png,w1\nb.png,w2\nc.png,w1\n")
    ds = load_manifest(tmp_path / "m.csv")
    assert ds.num_classes == 2 and ds.class_counts() == {"w1": 2, "w2": 1}
    assert ds.ids == ("a.png", "b.png", "c.png")


def test_manifest_kaggle_header(tmp_path):
    (tmp_path / "m.csv").write_text("Image,whaleID\nw_1.jpg,whale_1\n")
    assert load_manifest(tmp_path / "m.csv").classes == ("whale_1",)


def test_manifest_missing_image_names_line(tmp_path):
    (tmp_path / "a.png").write_bytes(b"")
    (tmp_path / "m.csv").write_text("a.png,x\nghost.png,y\n")
    with pytest.raises(DataError, match=r"m.csv:2: .*ghost.png"):
        load_manifest(tmp_path / "m.csv", tmp_path)


def test_manifest_duplicate(tmp_path):
    (tmp_path / "m.csv").write_text("a.png,x\nb.png,y\na.png,y\n")
    with pytest.raises(DataError, match="duplicate"):
        load_manifest(tmp_path / "m.csv")


def test_manifest_malformed_row(tmp_path):
    (tmp_path / "m.csv").write_text("a.png,x,extra\n")
    with pytest.raises(DataError, match=":1:"):
        load_manifest(tmp_path / "m.csv")


# -- alpha filter ----------------------------------------------------------------------

def test_alpha_filter_example():
    ds = toy(np.repeat([0, 1, 2], [25, 19, 20]))
    out = alpha_filter(ds, 20)
    assert out.classes == ("c0", "c2") and len(out) == 45
    np.testing.assert_array_equal(np.bincount(out.labels), [25, 20])
    assert "dropped 1 classes / 19 samples" in out.provenance


@given(st.lists(st.integers(0, 5), min_size=1, max_size=80), st.integers(1, 10))
def test_alpha_filter_properties(labels, m):
    labels = np.array(labels)
    labels = np.unique(labels, return_inverse=True)[1]
    ds = toy(labels)
    assert alpha_filter(ds, 1).ids == ds.ids
    if np.bincount(labels).max() < m:
        with pytest.raises(DataError):
            alpha_filter(ds, m)
        return
    once = alpha_filter(ds, m)
    twice = alpha_filter(once, m)
    assert twice.ids == once.ids and twice.classes == once.classes
    assert np.bincount(once.labels).min() >= m


# -- splits ------------------------------------------------------------------------------

def test_split_sizes_and_determinism():
    ds = toy(np.arange(100) % 2)
    a_tr, a_va = split(ds, SplitSpec(0.8, 7, stratified=False))
    assert (len(a_tr), len(a_va)) == (80, 20)
    b_tr, _ = split(ds, SplitSpec(0.8, 7, stratified=False))
    assert a_tr.ids == b_tr.ids
    c_tr, _ = split(ds, SplitSpec(0.8, 8, stratified=False))
    assert a_tr.ids != c_tr.ids


def test_stratified_split_per_class():
    tr, va = split_indices(np.repeat([0, 1], 20), SplitSpec(0.8, 0))
    labels = np.repeat([0, 1], 20)
    assert np.bincount(labels[tr]).tolist() == [16, 16]
    assert np.bincount(labels[va]).tolist() == [4, 4]


def test_stratified_split_rejects_singleton_class():
    with pytest.raises(DataError, match=r"\[2\]"):
        split_indices([0, 0, 1, 1, 2], SplitSpec())


def test_split_fraction_validation():
    with pytest.raises(ConfigError):
        SplitSpec(1.0)


@given(st.lists(st.integers(0, 4), min_size=4, max_size=60), st.floats(0.2, 0.8), st.integers(0, 99),
       st.booleans())
def test_split_partitions(labels, frac, seed, stratified):
    labels = np.array(labels)
    if np.any(np.bincount(labels) == 1):
        labels = np.concatenate([labels, labels])
    try:
        tr, va = split_indices(labels, SplitSpec(frac, seed, stratified))
    except DataError:
        return
    assert not set(tr) & set(va)
    assert sorted(np.concatenate([tr, va]).tolist()) == list(range(len(labels)))
    np.testing.assert_array_equal(np.sort(np.concatenate([labels[tr], labels[va]])), np.sort(labels))


def test_stratified_subsample_proportions():
    ds = toy(np.repeat([0, 1, 2], [500, 300, 200]))
    sub = stratified_subsample(ds, 100, seed=1)
    assert len(sub) == 100
    assert np.bincount(sub.labels).tolist() == [50, 30, 20]


@pytest.mark.skipif(not os.environ.get("CALLOSITY_WHALE_CSV"), reason="whale manifest not provided")
def test_whale_alpha_counts():
    out = alpha_filter(load_manifest(os.environ["CALLOSITY_WHALE_CSV"]), 20)
    assert (len(out), out.num_classes) == (924, 38)


@given(st.lists(st.integers(0, 6), min_size=2, max_size=200), st.integers(1, 200), st.integers(0, 99))
def test_stratified_subsample_exact_size(labels, n, seed):
    labels = np.unique(labels, return_inverse=True)[1]
    sub = stratified_subsample(toy(labels), n, seed)
    assert len(sub) == min(n, len(labels))
    full = np.bincount(labels)
    got = np.bincount(sub.labels, minlength=len(full))
    assert np.all(np.abs(got - full * len(sub) / len(labels)) < 1)
