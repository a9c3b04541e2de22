import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from transfer_mia.data import (
    DataError,
    LabeledDataset,
    chunk,
    load_dataset,
    save_packed,
    split_dataset,
)

from conftest import random_dataset


def _write_image_tree(root, classes=2, per_class=5, size=12, seed=0):
    rng = np.random.default_rng(seed)
    for c in range(classes):
        d = root / f"class_{chr(ord('a') + c)}"
        d.mkdir(parents=True)
        for i in range(per_class):
            arr = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
            Image.fromarray(arr).save(d / f"img{i}.png")
    return root


def test_load_directory_counts(tmp_path):
    ds = load_dataset(_write_image_tree(tmp_path / "corpus"))
    assert ds.num_classes == 2
    assert len(ds) == 10
    assert ds.sample_shape == (32, 32, 3)
    assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0


def test_class_indices_follow_lexicographic_names(tmp_path):
    root = _write_image_tree(tmp_path / "corpus")
    ds = load_dataset(root, resolution=12)
    by_id = dict(zip(ds.ids, ds.labels))
    assert by_id["class_a/img0.png"] == 0
    assert by_id["class_b/img0.png"] == 1


def test_limit_is_deterministic(tmp_path):
    root = _write_image_tree(tmp_path / "corpus")
    a = load_dataset(root, limit=4)
    b = load_dataset(root, limit=4)
    assert len(a) == 4
    assert a.ids == b.ids
    assert set(a.labels) == {0, 1}


def test_load_is_idempotent(tmp_path):
    root = _write_image_tree(tmp_path / "corpus")
    assert load_dataset(root).same_as(load_dataset(root))


def test_empty_directory_is_rejected(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(DataError, match="empty class"):
        load_dataset(tmp_path / "empty")


def test_class_without_images_is_rejected(tmp_path):
    root = _write_image_tree(tmp_path / "corpus")
    (root / "class_z").mkdir()
    with pytest.raises(DataError, match="empty class"):
        load_dataset(root)


def test_missing_path():
    with pytest.raises(FileNotFoundError):
        load_dataset("/nonexistent/corpus")


def test_packed_round_trip(tmp_path):
    ds = random_dataset(12, num_classes=3, shape=(6, 6, 3))
    path = tmp_path / "packed.npz"
    save_packed(ds, path)
    loaded = load_dataset(path, resolution=None)
    assert loaded.ids == ds.ids
    assert loaded.num_classes == 3
    np.testing.assert_allclose(loaded.features, ds.features, atol=0.5 / 255 + 1e-7)


def test_packed_metadata_and_resize(tmp_path):
    feats = np.zeros((4, 10, 10, 3), np.uint8)
    path = tmp_path / "p.npz"
    save_packed((feats, np.array([0, 1, 0, 1])), path, num_classes=2, name="tiny")
    ds = load_dataset(path, resolution=16)
    assert ds.name == "tiny" and ds.sample_shape == (16, 16, 3)
    with np.load(path) as archive:
        assert json.loads(str(archive["metadata"])) == {"num_classes": 2, "name": "tiny"}


def test_packed_empty_class(tmp_path):
    path = tmp_path / "p.npz"
    save_packed((np.zeros((4, 4, 4, 3), np.uint8), np.array([0, 0, 1, 1])), path, num_classes=3, name="x")
    with pytest.raises(DataError, match="empty class"):
        load_dataset(path)


def test_dataset_invariants():
    with pytest.raises(DataError, match="duplicate"):
        LabeledDataset(np.zeros((2, 2, 2, 1)), [0, 1], ("a", "a"), 2)
    with pytest.raises(DataError, match="label outside"):
        LabeledDataset(np.zeros((2, 2, 2, 1)), [0, 2], ("a", "b"), 2)


def _sizes(bundle):
    return tuple(len(p) for p in bundle.partitions.values())


def test_split_even():
    bundle = split_dataset(random_dataset(16), seed=7)
    assert _sizes(bundle) == (4, 4, 4, 4)


def test_split_odd_tie_break():
    bundle = split_dataset(random_dataset(15), seed=7)
    assert len(bundle.target_half) == 8 and len(bundle.shadow_half) == 7
    assert (len(bundle.target_train), len(bundle.target_test)) == (4, 4)
    assert (len(bundle.shadow_train), len(bundle.shadow_test)) == (4, 3)


def test_split_deterministic():
    ds = random_dataset(40)
    a, b = split_dataset(ds, 3), split_dataset(ds, 3)
    for name in a.partitions:
        assert a.partitions[name].ids == b.partitions[name].ids
    assert split_dataset(ds, 4).target_train.ids != a.target_train.ids


def test_split_too_small():
    with pytest.raises(DataError, match="too small"):
        split_dataset(random_dataset(3), 0)


def test_split_depends_only_on_id_set():
    ds = random_dataset(30)
    rev = ds.subset(list(reversed(ds.ids)))
    a, b = split_dataset(ds, 11), split_dataset(rev, 11)
    for name in a.partitions:
        assert a.partitions[name].ids == b.partitions[name].ids


@settings(max_examples=60, deadline=None)
@given(n=st.integers(4, 1000), seed=st.integers(0, 2**31 - 1))
def test_split_partitions_disjoint_and_cover(n, seed):
    ds = LabeledDataset(np.zeros((n, 1, 1, 1), np.float32), np.zeros(n, int), tuple(map(str, range(n))), 1)
    bundle = split_dataset(ds, seed)
    parts = [set(p.ids) for p in bundle.partitions.values()]
    assert sum(map(len, parts)) == n
    assert set().union(*parts) == set(ds.ids)
    assert abs(len(bundle.target_half) - len(bundle.shadow_half)) <= 1
    assert abs(len(bundle.target_train) - len(bundle.target_test)) <= 1
    assert abs(len(bundle.shadow_train) - len(bundle.shadow_test)) <= 1


def test_chunk_even_and_disjoint():
    parts = chunk(random_dataset(9), 2)
    assert [len(p) for p in parts] == [4, 5] or [len(p) for p in parts] == [5, 4]
    assert not set(parts[0].ids) & set(parts[1].ids)
