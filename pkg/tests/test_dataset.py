import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedfair.dataset import Dataset, load_idx, load_labels, save_idx, slice_client, split_sizes, synth_blobs
from fedfair.datasplit import PartitionManifest, SplitSpec, split
from fedfair.errors import FormatError, InvalidSpec
from fedfair.fixtures import fixture_path


def nearest_centroid_accuracy(ds: Dataset) -> float:
    cents = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(ds.num_classes)])
    d = ((ds.features[:, None, :] - cents[None]) ** 2).sum(axis=2)
    return float((d.argmin(axis=1) == ds.labels).mean())


def test_blobs_shape_and_separability():
    ds = synth_blobs(3, 2, 100, spread=5, seed=0)
    assert ds.features.shape == (300, 2)
    assert np.bincount(ds.labels).tolist() == [100, 100, 100]
    assert nearest_centroid_accuracy(ds) > 0.95


def test_blobs_zero_noise_zero_spread():
    ds = synth_blobs(2, 1, 1, spread=0, seed=3, noise=0)
    np.testing.assert_array_equal(ds.features, np.zeros((2, 1)))
    assert sorted(ds.labels.tolist()) == [0, 1]


def test_blobs_zero_noise_samples_sit_on_means():
    ds = synth_blobs(2, 1, 1, spread=2.0, seed=3, noise=0)
    got = {int(y): float(x[0]) for x, y in zip(ds.features, ds.labels)}
    assert got == {0: -2.0, 1: 2.0}


def test_blobs_deterministic():
    a, b = synth_blobs(4, 5, 20, seed=9), synth_blobs(4, 5, 20, seed=9)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.features, synth_blobs(4, 5, 20, seed=10).features)


def test_blobs_means_converge():
    spread = 4.0
    ds = synth_blobs(3, 6, 10_000, spread=spread, seed=1, noise=1.0)
    means = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(3)])
    # true means lie on a circle of radius `spread` centred at the origin
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), spread, atol=0.1 * spread)
    gaps = np.linalg.norm(means[:, None] - means[None], axis=2)[np.triu_indices(3, 1)]
    np.testing.assert_allclose(gaps, spread * np.sqrt(3), atol=0.2 * spread)


@pytest.mark.parametrize("args", [(1, 2, 10), (3, 0, 10), (3, 2, 0)])
def test_blobs_invalid(args):
    with pytest.raises(InvalidSpec):
        synth_blobs(*args)
    with pytest.raises(InvalidSpec):
        synth_blobs(3, 2, 10, spread=-1)


def test_idx_fixture_values():
    ds = load_idx(fixture_path("tiny-images.idx"), fixture_path("tiny-labels.idx"))
    assert ds.features.shape == (2, 9)
    assert ds.image_shape == (3, 3)
    np.testing.assert_allclose(ds.features[0], [0, 0.2, 0.4, 0.6, 0.8, 1.0, 0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(ds.features[1], np.array([255, 255, 255, 0, 128, 0, 1, 2, 3]) / 255.0, atol=1e-15)
    assert ds.labels.tolist() == [7, 2]


def test_idx_roundtrip_bytes(tmp_path):
    ds = load_idx(fixture_path("tiny-images.idx"), fixture_path("tiny-labels.idx"))
    save_idx(ds, tmp_path / "i.idx", tmp_path / "l.idx")
    assert (tmp_path / "i.idx").read_bytes() == fixture_path("tiny-images.idx").read_bytes()
    assert (tmp_path / "l.idx").read_bytes() == fixture_path("tiny-labels.idx").read_bytes()


def _idx_images(n, rows=2, cols=2):
    return bytes.fromhex("00000803") + n.to_bytes(4, "big") + rows.to_bytes(4, "big") + cols.to_bytes(4, "big") \
        + bytes(range(n * rows * cols))


def _idx_labels(labels):
    return bytes.fromhex("00000801") + len(labels).to_bytes(4, "big") + bytes(labels)


def test_idx_count_mismatch(tmp_path):
    (tmp_path / "i").write_bytes(_idx_images(3))
    (tmp_path / "l").write_bytes(_idx_labels([0, 1]))
    with pytest.raises(FormatError):
        load_idx(tmp_path / "i", tmp_path / "l")


def test_idx_bad_magic_and_truncation(tmp_path):
    (tmp_path / "i").write_bytes(_idx_labels([0, 1]))
    (tmp_path / "l").write_bytes(_idx_labels([0, 1]))
    with pytest.raises(FormatError):
        load_idx(tmp_path / "i", tmp_path / "l")
    (tmp_path / "i").write_bytes(_idx_images(2)[:-1])
    with pytest.raises(FormatError):
        load_idx(tmp_path / "i", tmp_path / "l")


def test_idx_zero_images(tmp_path):
    (tmp_path / "i").write_bytes(_idx_images(0, 28, 28))
    (tmp_path / "l").write_bytes(_idx_labels([]))
    ds = load_idx(tmp_path / "i", tmp_path / "l", num_classes=10)
    assert len(ds) == 0 and ds.features.shape == (0, 784)


def test_idx_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_idx(tmp_path / "nope", tmp_path / "nope2")


def test_load_labels_idx_and_csv(tmp_path):
    assert load_labels(fixture_path("tiny-labels.idx")).tolist() == [7, 2]
    (tmp_path / "y.csv").write_text("label\n1\n0\n2\n")
    assert load_labels(tmp_path / "y.csv").tolist() == [1, 0, 2]


def test_dataset_csv_roundtrip(tmp_path):
    ds = synth_blobs(3, 4, 5, seed=2)
    ds.to_csv(tmp_path / "d.csv")
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "feature_0,feature_1,feature_2,feature_3,label"
    back = Dataset.from_csv(tmp_path / "d.csv", num_classes=3)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_dataset_is_read_only():
    ds = synth_blobs(2, 2, 3)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


@pytest.mark.parametrize("n,expected", [(10, (6, 2, 2)), (5, (3, 1, 1)), (1, (1, 0, 0)), (2, (1, 0, 1)),
                                        (4, (2, 1, 1)), (100, (60, 20, 20))])
def test_split_sizes(n, expected):
    assert split_sizes(n) == expected


def _manifest(sizes):
    labels = np.zeros(sum(sizes), dtype=int)
    spec = SplitSpec("DS1", 1, ds1_overlap_k=1)
    offs = np.cumsum([0] + list(sizes))
    assignments = [np.arange(offs[i], offs[i + 1]) for i in range(len(sizes))]
    hist = np.array([[s] for s in sizes])
    return PartitionManifest(spec, 1, np.array([len(labels)]), assignments, hist)


def test_slice_client_single_sample_is_degenerate():
    m = _manifest([1, 10])
    cd = slice_client(m, 0)
    assert (len(cd.train), len(cd.val), len(cd.test)) == (1, 0, 0)
    assert cd.degenerate
    cd = slice_client(m, 1)
    assert (len(cd.train), len(cd.val), len(cd.test)) == (6, 2, 2)
    assert not cd.degenerate


def test_slice_client_errors():
    m = _manifest([10])
    with pytest.raises(InvalidSpec):
        slice_client(m, 1)
    with pytest.raises(InvalidSpec):
        slice_client(m, 0, fractions=(0.5, 0.2, 0.2))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.sampled_from(["DS1", "DS2", "DS3"]))
def test_slices_partition_each_client(k, seed, strategy):
    labels = np.repeat(np.arange(4), 30)
    m = split(labels, SplitSpec(strategy, k, seed=seed, ds1_overlap_k=2))
    for i in range(k):
        cd = slice_client(m, i, seed=seed)
        parts = np.concatenate([cd.train, cd.val, cd.test])
        assert len(set(parts.tolist())) == len(parts)
        assert sorted(parts.tolist()) == sorted(m.assignments[i].tolist())
        n = len(parts)
        if n >= 5:
            for got, frac in zip((cd.train, cd.val, cd.test), (0.6, 0.2, 0.2)):
                assert abs(len(got) - frac * n) <= 1
