import numpy as np
import pytest

from debclust import container


def sample_tensors():
    rng = np.random.default_rng(0)
    return {"w": rng.standard_normal((3, 4)), "scalar": np.array(2.5), "empty": np.zeros((0, 2)),
            "nan": np.array([np.nan, np.inf, -0.0]), "deep.name": rng.standard_normal((2, 1, 3, 2))}


def test_round_trip_is_bit_exact(tmp_path):
    tensors = sample_tensors()
    path = tmp_path / "t.bin"
    container.save(path, tensors)
    back = container.load(path)
    assert list(back) == list(tensors)
    for name, value in tensors.items():
        assert back[name].shape == value.shape
        assert back[name].tobytes() == value.astype(np.float64).tobytes()


def test_layout_of_single_tensor():
    raw = container.dumps({"ab": np.array([1.0, 2.0])})
    assert raw[:4] == (2).to_bytes(4, "little")
    assert raw[4:6] == b"ab"
    assert raw[6:10] == (1).to_bytes(4, "little")
    assert raw[10:18] == (2).to_bytes(8, "little")
    assert np.frombuffer(raw[18:], "<f8").tolist() == [1.0, 2.0]


def test_truncated_input_rejected():
    raw = container.dumps(sample_tensors())
    for cut in (3, 10, len(raw) - 1):
        with pytest.raises(container.ContainerError):
            container.loads(raw[:cut])


def test_duplicate_names_rejected():
    one = container.dumps({"a": np.ones(2)})
    with pytest.raises(container.ContainerError):
        container.loads(one + one)
