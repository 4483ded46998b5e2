import numpy as np
import pytest

from debclust.data import (CIFAR_RECORD, AugmentConfig, Dataset, FormatError, LongTailSpec, augment_image,
                           augment_vector, blob_means, gaussian_blur, gen_blobs, load_dataset, long_tail_counts,
                           parse_cifar10, read_cifar10, resize_bilinear, round_half_away, save_dataset,
                           serialize_cifar10)
from debclust.evaluation import ProbeConfig, linear_probe

IDENTITY = AugmentConfig(crop_scale=(1.0, 1.0), crop_aspect=(1.0, 1.0), flip_p=0.0, grayscale_p=0.0,
                         jitter_p=0.0, blur_p=0.0)


def fake_cifar(n, seed=0):
    rng = np.random.default_rng(seed)
    raw = rng.integers(0, 256, size=(n, CIFAR_RECORD), dtype=np.uint8)
    raw[:, 0] = rng.integers(0, 10, n)
    return raw.tobytes()


def test_round_half_away():
    assert [round_half_away(x) for x in (0.5, 1.5, 2.5, -0.5, -2.5, 2.4)] == [1, 2, 3, -1, -3, 2]


def test_long_tail_examples():
    counts = long_tail_counts(LongTailSpec(10, 5000, 100))
    assert counts[0] == 5000 and counts[9] == 50
    assert counts[5] == 387
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert long_tail_counts(LongTailSpec(4, 123, 1)) == [123] * 4


@pytest.mark.parametrize("ratio", [10, 20, 50, 100])
def test_long_tail_ratio(ratio):
    counts = long_tail_counts(LongTailSpec(5, 2000, ratio))
    assert abs(counts[0] / counts[-1] - ratio) / ratio < 0.02


def test_long_tail_validation():
    with pytest.raises(ValueError):
        LongTailSpec(1, 100, 10)
    with pytest.raises(ValueError):
        LongTailSpec(3, 100, 0.5)


def test_blobs_without_noise_sit_on_means():
    means = blob_means(3, 4, 5.0)
    ds = gen_blobs(means, 0.0, [2, 3, 1], seed=0)
    np.testing.assert_array_equal(ds.samples, means[ds.labels])
    assert ds.labels.tolist() == [0, 0, 1, 1, 1, 2]


def test_blobs_are_linearly_separable():
    ds = gen_blobs(np.array([[3.0, 0.0], [-3.0, 0.0]]), 0.5, [100, 100], seed=0)
    m = linear_probe(ds.samples, ds.labels, ds.samples, ds.labels, 2, ProbeConfig(epochs=100, batch_size=64))
    assert m.top1 >= 0.99


def test_blobs_are_deterministic():
    a = gen_blobs(blob_means(2, 3, 4.0), 1.0, [5, 7], seed=9)
    b = gen_blobs(blob_means(2, 3, 4.0), 1.0, [5, 7], seed=9)
    assert a.samples.tobytes() == b.samples.tobytes()


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 2)), [0, 1], 2)
    with pytest.raises(ValueError):
        Dataset(np.ones((2, 2)), [0, 2], 2)


def test_cifar_size_arithmetic():
    assert 10000 * CIFAR_RECORD == 30_730_000
    ds = parse_cifar10(fake_cifar(50))
    assert ds.samples.shape == (50, 3, 32, 32)


def test_cifar_label_and_zero_record():
    raw = bytearray(CIFAR_RECORD * 2)
    raw[0] = 3
    ds = parse_cifar10(bytes(raw))
    assert ds.labels.tolist() == [3, 0]
    assert np.all(np.isfinite(ds.samples))


def test_cifar_round_trip_is_lossless():
    raw = fake_cifar(40, seed=1)
    assert serialize_cifar10(parse_cifar10(raw)) == raw
    zero = bytes(CIFAR_RECORD * 3)
    assert serialize_cifar10(parse_cifar10(zero)) == zero


def test_cifar_errors():
    with pytest.raises(FormatError, match="offset 3073"):
        parse_cifar10(fake_cifar(2)[:-5])
    raw = bytearray(fake_cifar(2))
    raw[CIFAR_RECORD] = 10
    with pytest.raises(FormatError, match="offset 3073"):
        parse_cifar10(bytes(raw))


def test_read_cifar_concatenates_and_limits(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    a.write_bytes(fake_cifar(3, 0))
    b.write_bytes(fake_cifar(4, 1))
    assert len(read_cifar10([a, b])) == 7
    assert len(read_cifar10([a, b], limit=5)) == 5


def test_dataset_file_round_trip(tmp_path):
    ds = gen_blobs(blob_means(3, 2, 4.0), 1.0, [4, 3, 2], seed=0)
    save_dataset(ds, tmp_path / "train")
    back = load_dataset(tmp_path / "train")
    assert back.samples.tobytes() == ds.samples.tobytes()
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.class_count == 3 and back.channel_mean is None
    img = parse_cifar10(fake_cifar(5))
    save_dataset(img, tmp_path / "img")
    back = load_dataset(tmp_path / "img")
    assert serialize_cifar10(back) == serialize_cifar10(img)


def test_resize_identity_and_constant():
    img = np.random.default_rng(0).random((3, 6, 5))
    np.testing.assert_allclose(resize_bilinear(img, 6, 5), img, atol=1e-15)
    np.testing.assert_allclose(resize_bilinear(np.full((1, 4, 4), 0.3), 9, 7), 0.3, atol=1e-15)


def test_blur_preserves_constant_image():
    np.testing.assert_allclose(gaussian_blur(np.full((3, 8, 8), 0.7), 3, 1.0), 0.7, atol=1e-15)


def test_identity_pipeline():
    img = np.random.default_rng(0).random((3, 16, 16))
    np.testing.assert_allclose(augment_image(img, IDENTITY, 5), img, atol=1e-15)


def test_flip_is_an_involution():
    cfg = AugmentConfig(crop_scale=(1.0, 1.0), crop_aspect=(1.0, 1.0), flip_p=1.0, grayscale_p=0.0,
                        jitter_p=0.0, blur_p=0.0)
    img = np.random.default_rng(1).random((3, 8, 8))
    once = augment_image(img, cfg, 0)
    np.testing.assert_allclose(once, img[:, :, ::-1], atol=1e-15)
    np.testing.assert_allclose(augment_image(once, cfg, 1), img, atol=1e-15)


def test_augmentation_is_deterministic_and_bounded():
    img = np.random.default_rng(2).random((3, 16, 16))
    cfg = AugmentConfig()
    a, b = augment_image(img, cfg, 42), augment_image(img, cfg, 42)
    assert a.tobytes() == b.tobytes()
    assert a.shape == img.shape
    assert a.min() >= -1e-12 and a.max() <= 1 + 1e-12
    assert not np.array_equal(augment_image(img, cfg, 43), a)


def test_grayscale_channels_equal():
    cfg = AugmentConfig(flip_p=0.0, grayscale_p=1.0, jitter_p=0.0, blur_p=0.0)
    out = augment_image(np.random.default_rng(3).random((3, 8, 8)), cfg, 0)
    np.testing.assert_array_equal(out[0], out[1])
    np.testing.assert_array_equal(out[1], out[2])


def test_augment_vector_examples():
    v = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(augment_vector(v, 0.0, 0.0, 1), v)
    np.testing.assert_array_equal(augment_vector(v, 0.5, 1.0, 1), np.zeros(3))
    a, b = augment_vector(v, 0.1, 0.0, 1), augment_vector(v, 0.1, 0.0, 2)
    assert not np.array_equal(a, b)
    assert augment_vector(v, 0.1, 0.2, 7).tobytes() == augment_vector(v, 0.1, 0.2, 7).tobytes()
