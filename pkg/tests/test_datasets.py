import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advaug import datasets as D
from advaug.errors import ConfigError, DegenerateDataError, FormatError, LengthError, SamplingError


def _write(path, data):
    path.write_bytes(data)
    return path


# -- IDX --------------------------------------------------------------------------


def test_idx_zero_image(tmp_path):
    header = (2051).to_bytes(4, "big") + (1).to_bytes(4, "big") + (28).to_bytes(4, "big") * 2
    images = D.read_idx_images(_write(tmp_path / "img", header + bytes(784)))
    assert images.shape == (1, 1, 28, 28) and images.dtype == np.uint8 and not images.any()


def test_idx_labels_hand_built(tmp_path):
    raw = (2049).to_bytes(4, "big") + (10).to_bytes(4, "big") + bytes(range(10))
    assert D.read_idx_labels(_write(tmp_path / "lab", raw)).tolist() == list(range(10))


def test_idx_bad_magic_and_lengths(tmp_path):
    raw = (2049).to_bytes(4, "big") + (10).to_bytes(4, "big") + bytes(range(10))
    with pytest.raises(FormatError):
        D.read_idx_images(_write(tmp_path / "a", raw))
    with pytest.raises(LengthError):
        D.read_idx_labels(_write(tmp_path / "b", raw[:-1]))
    with pytest.raises(FormatError):
        D.read_idx_labels(_write(tmp_path / "c", raw + b"\0"))
    with pytest.raises(LengthError):
        D.read_idx_labels(_write(tmp_path / "d", b"\0\0"))


def test_idx_count_mismatch(tmp_path):
    imgs = np.zeros((3, 28, 28), np.uint8)
    D.write_idx(tmp_path / "i", tmp_path / "l", imgs, [0, 1])
    with pytest.raises(LengthError):
        D.load_idx(tmp_path / "i", tmp_path / "l")


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 5), h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 2 ** 16))
def test_idx_round_trip_bytes(tmp_path_factory, n, h, w, seed):
    rng = np.random.default_rng(seed)
    imgs = rng.integers(0, 256, size=(n, h, w), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    raw_i, raw_l = D.encode_idx_images(imgs), D.encode_idx_labels(labels)
    d = tmp_path_factory.mktemp("idx")
    x, y = D.load_idx(_write(d / "i", raw_i), _write(d / "l", raw_l))
    assert np.array_equal(x[:, 0], imgs) and np.array_equal(y, labels)
    assert D.encode_idx_images(x) == raw_i and D.encode_idx_labels(y) == raw_l


def test_idx_four_dim_channels(tmp_path):
    imgs = np.arange(2 * 3 * 4 * 4, dtype=np.uint8).reshape(2, 3, 4, 4)
    x = D.read_idx_images(_write(tmp_path / "i", D.encode_idx_images(imgs)))
    assert np.array_equal(x, imgs)


# -- CIFAR ------------------------------------------------------------------------


def test_cifar_white_record(tmp_path):
    x, y = D.load_cifar10(_write(tmp_path / "b", bytes([0]) + bytes([255]) * 3072))
    assert x.shape == (1, 3, 32, 32) and (x == 255).all() and y.tolist() == [0]


def test_cifar_ramp_channel_zero(tmp_path):
    ramp = np.arange(1024) % 256
    rec = np.concatenate([[7], ramp, np.zeros(2048)]).astype(np.uint8)
    x, y = D.load_cifar10([_write(tmp_path / "b", rec.tobytes())])
    flat = x[0, 0].reshape(-1)
    assert all(int(flat[i]) == i % 256 for i in range(1024)) and y[0] == 7 and not x[0, 1:].any()


def test_cifar_errors_and_concat(tmp_path):
    with pytest.raises(FormatError):
        D.load_cifar10(_write(tmp_path / "short", bytes(3000)))
    with pytest.raises(ValueError):
        D.load_cifar10(_write(tmp_path / "lab", bytes([10]) + bytes(3072)))
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (3, 3, 32, 32), dtype=np.uint8)
    raw = D.encode_cifar10(imgs, [1, 2, 3])
    x, y = D.load_cifar10([_write(tmp_path / "a", raw), _write(tmp_path / "b", raw)])
    assert len(x) == 6 and y.tolist() == [1, 2, 3] * 2
    assert D.encode_cifar10(x[:3], y[:3]) == raw


# -- subsets ----------------------------------------------------------------------


def _full(per_class=80, classes=10):
    labels = np.repeat(np.arange(classes), per_class)
    labels = np.random.default_rng(5).permutation(labels)
    return D.LabeledSet(np.zeros((len(labels), 1, 2, 2), np.uint8), labels)


def test_subset_550_balanced():
    train, val = D.make_subset(D.DatasetSpec("mnist", subset_size=550, seed=3), _full())
    assert len(train) == 550 and len(val) == 0
    assert np.bincount(train.labels).tolist() == [55] * 10


@settings(max_examples=30, deadline=None)
@given(n=st.integers(10, 800), seed=st.integers(0, 1000), frac=st.sampled_from([0.0, 0.1, 0.2]))
def test_subset_balance_and_determinism(n, seed, frac):
    full = _full()
    spec = D.DatasetSpec("mnist", subset_size=n, seed=seed, val_fraction=frac)
    try:
        train, val = D.make_subset(spec, full)
    except ConfigError:
        return  # too few samples per class for the requested validation split
    counts = np.bincount(np.concatenate([train.labels, val.labels]), minlength=10)
    assert counts.sum() == n and counts.max() - counts.min() <= 1
    if frac:
        assert (np.bincount(val.labels, minlength=10) >= 1).all()
    train2, val2 = D.make_subset(spec, full)
    assert np.array_equal(train.indices, train2.indices) and np.array_equal(val.indices, val2.indices)
    assert not set(train.indices) & set(val.indices)


def test_subset_identity_and_errors():
    full = _full(per_class=5)
    train, val = D.make_subset(D.DatasetSpec("mnist", subset_size=len(full)), full)
    assert np.array_equal(train.indices, np.arange(len(full))) and len(val) == 0
    with pytest.raises(ConfigError):
        D.make_subset(D.DatasetSpec("mnist", subset_size=len(full) + 1), full)
    with pytest.raises(ConfigError):
        D.DatasetSpec("imagenet")
    with pytest.raises(ConfigError):
        D.DatasetSpec("mnist", val_fraction=1.0)


# -- normalization ----------------------------------------------------------------


def test_stats_two_pass_oracle():
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, size=(550, 1, 28, 28), dtype=np.uint8)
    total, count = 0.0, 0
    for img in images:
        for v in img.reshape(-1):
            total += float(v)
            count += 1
    mu = total / count
    sq = sum(float(((img.astype(np.float64) - mu) ** 2).sum()) for img in images)
    sigma = (sq / count) ** 0.5
    stats = D.compute_stats(images)
    assert abs(float(stats.mean) - mu) < 1e-9 and abs(float(stats.std) - sigma) < 1e-9
    normalized = D.preprocess(images, stats)
    assert normalized.shape == (550, 1, 32, 32)
    assert abs(float(normalized[:, :, 2:30, 2:30].astype(np.float64).mean())) < 1e-6
    assert np.allclose(normalized[:, :, 0, :], -mu / sigma)


def test_preprocess_trivial_cases():
    const = np.full((2, 1, 32, 32), 17, np.uint8)
    assert not D.preprocess(const, D.NormStats(17.0, 3.0)).any()
    x = np.random.default_rng(0).integers(0, 256, (2, 1, 32, 32), dtype=np.uint8)
    assert np.array_equal(D.preprocess(x, D.NormStats(0.0, 1.0)), x.astype(np.float32))
    with pytest.raises(DegenerateDataError):
        D.preprocess(x, D.compute_stats(const))


def test_denormalize_round_trip_and_per_channel():
    x = np.random.default_rng(0).integers(0, 256, (4, 3, 32, 32), dtype=np.uint8)
    stats = D.compute_stats(x, per_channel=True)
    assert stats.mean.shape == (3,)
    back = D.denormalize(D.preprocess(x, stats), stats)
    assert np.array_equal(np.rint(back).astype(np.uint8), x)
    assert np.allclose(D.preprocess(x, stats).mean(axis=(0, 2, 3)), 0, atol=1e-5)


# -- triples ----------------------------------------------------------------------


def test_triple_invariants_1000_draws():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(10), 55)
    train = D.LabeledSet(np.zeros((550, 1, 32, 32), np.float32), labels)
    sampler = D.TripleSampler(train, 4, rng)
    for _ in range(1000):
        t = sampler.sample()
        assert np.array_equal(t.batch_k.labels.numpy(), t.batch_i.labels.numpy())
        assert (t.batch_k.indices != t.batch_i.indices).all()
        assert t.batch_i.images.shape == (4, 1, 32, 32)


def test_triple_two_sample_classes_exhaustive():
    train = D.LabeledSet(np.zeros((4, 1, 2, 2), np.float32), [0, 0, 1, 1])
    sampler = D.TripleSampler(train, 2, np.random.default_rng(0))
    for positions in ([0, 2], [1, 3], [0, 3], [1, 2]):
        partners = sampler.partner_positions(positions)
        assert partners.tolist() == [{0: 1, 1: 0, 2: 3, 3: 2}[p] for p in positions]


def test_triple_replay_and_singleton_error():
    labels = np.repeat(np.arange(3), 5)
    train = D.LabeledSet(np.random.default_rng(0).random((15, 1, 2, 2)).astype(np.float32), labels)
    a = [D.TripleSampler(train, 4, np.random.default_rng(9)).sample() for _ in range(1)]
    b = [D.TripleSampler(train, 4, np.random.default_rng(9)).sample() for _ in range(1)]
    for x, y in zip(a, b):
        for f in ("batch_i", "batch_j", "batch_k"):
            assert np.array_equal(getattr(x, f).indices, getattr(y, f).indices)
    lonely = D.LabeledSet(np.zeros((3, 1, 2, 2), np.float32), [0, 0, 1])
    with pytest.raises(SamplingError) as err:
        D.TripleSampler(lonely, 3, np.random.default_rng(0)).partner_positions([2])
    assert err.value.label == 1


def test_epoch_covers_training_set():
    labels = np.repeat(np.arange(2), 5)
    train = D.LabeledSet(np.zeros((10, 1, 2, 2), np.float32), labels)
    sampler = D.TripleSampler(train, 4, np.random.default_rng(0))
    seen = np.concatenate([t.batch_i.indices for t in sampler.epoch()])
    assert sorted(seen.tolist()) == list(range(10)) and sampler.steps_per_epoch() == 3
