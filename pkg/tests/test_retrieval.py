import numpy as np
import pytest
from hypothesis import given, strategies as st

from minegeo.errors import DegenerateConfigurationError, ValidationError
from minegeo.retrieval import (DescriptorIndex, load_external_descriptors, query_top_k, thumbnail_descriptor,
                               write_descriptors)


def test_descriptor_of_64x64_is_2x2_block_mean(rng):
    img = rng.uniform(0, 255, (64, 64))
    d = thumbnail_descriptor(img)
    ref = img.reshape(32, 2, 32, 2).mean(axis=(1, 3))
    ref = (ref - ref.mean()).ravel()
    assert np.allclose(d, ref / np.linalg.norm(ref), atol=1e-12)


@given(st.integers(32, 90), st.integers(32, 90), st.floats(0.1, 10), st.floats(-100, 100))
def test_descriptor_invariances(h, w, gain, bias):
    img = np.random.default_rng(h * 100 + w).uniform(0, 1, (h, w))
    d = thumbnail_descriptor(img)
    assert d.shape == (1024,) and abs(np.linalg.norm(d) - 1) < 1e-12 and abs(d.sum()) < 1e-9
    # affine brightness changes leave the descriptor unchanged
    assert np.allclose(thumbnail_descriptor(gain * img + bias), d, atol=1e-9)


def test_descriptor_errors():
    with pytest.raises(DegenerateConfigurationError):
        thumbnail_descriptor(np.full((40, 40), 7.0))
    with pytest.raises(ValidationError):
        thumbnail_descriptor(np.zeros((10, 40)))
    with pytest.raises(ValidationError):
        thumbnail_descriptor(np.zeros((40, 40, 3)))


def test_top_k_order_and_ties():
    d = np.array([[1.0, 0, 0], [0.0, 1, 0], [1.0, 0, 0], [0.6, 0.8, 0]])
    idx = DescriptorIndex(["c", "x", "a", "m"], d)
    top = query_top_k(idx, [1.0, 0, 0], 3)
    assert [n for n, _ in top] == ["a", "c", "m"]
    assert top[2][1] == pytest.approx(0.6)
    assert len(query_top_k(idx, [0, 0, 1.0], 10)) == 4


def test_index_validation():
    with pytest.raises(ValidationError):
        DescriptorIndex(["a"], [[2.0, 0.0]])
    with pytest.raises(ValidationError):
        DescriptorIndex(["a", "a"], np.eye(2))
    idx = DescriptorIndex(["a"], [[1.0, 0.0]])
    with pytest.raises(ValidationError):
        query_top_k(idx, [1.0, 0, 0])
    with pytest.raises(ValidationError):
        query_top_k(idx, [0.0, 0.0])


def test_descriptor_file_round_trip(tmp_path, rng):
    d = rng.normal(size=(5, 16))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    idx = DescriptorIndex([f"img_{i}.jpg" for i in range(4)] + ["ünï.jpg"], d)
    write_descriptors(idx, tmp_path / "d.gdsc")
    back = load_external_descriptors(tmp_path / "d.gdsc")
    assert back.names == idx.names
    # float32 storage, renormalized on load
    assert np.allclose(back.descriptors, d, atol=1e-6)
    assert np.allclose(np.linalg.norm(back.descriptors, axis=1), 1.0, atol=1e-12)


def test_synthetic_retrieval_finds_nearby_views(small_scene):
    from minegeo.synthetic import descriptor_index

    db = descriptor_index(small_scene, small_scene.db)
    # a database view queried against itself comes back first
    for v in small_scene.db[:5]:
        assert query_top_k(db, db.get(v.name), 1)[0][0] == v.name
