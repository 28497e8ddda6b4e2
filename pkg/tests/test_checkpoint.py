"""Round-trip and corruption tests for the tensor checkpoint container."""

import numpy as np
import pytest

from vgcn.checkpoint import load_tensors, save_tensors
from vgcn.errors import CheckpointMismatchError


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"w0": rng.normal(size=(4, 3)), "w1": rng.normal(size=(3, 2)),
               "scalar": np.array(2.5)}
    meta = {"kind": "gcn", "seed": 7}
    path = tmp_path / "model.ckpt"
    save_tensors(path, tensors, meta)
    loaded, loaded_meta = load_tensors(path)
    assert loaded_meta == meta
    assert set(loaded) == set(tensors)
    for name in tensors:
        np.testing.assert_array_equal(loaded[name], tensors[name])


def test_deterministic_bytes(tmp_path):
    tensors = {"b": np.arange(6.0).reshape(2, 3), "a": np.ones(4)}
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    save_tensors(p1, tensors, {"x": 1})
    save_tensors(p2, dict(reversed(list(tensors.items()))), {"x": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"definitely not a checkpoint")
    with pytest.raises(CheckpointMismatchError):
        load_tensors(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "model.ckpt"
    save_tensors(path, {"w": np.ones((10, 10))})
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(CheckpointMismatchError):
        load_tensors(path)


def test_empty_meta_defaults(tmp_path):
    path = tmp_path / "model.ckpt"
    save_tensors(path, {"w": np.ones(2)})
    _, meta = load_tensors(path)
    assert meta == {}
