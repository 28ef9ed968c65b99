import numpy as np
import pytest

from projfusion import metrics
from projfusion.dataio import write_dataset
from projfusion.rng import SplitMix64, derive
from projfusion.synth import synth_dataset


def class_anchors(num_classes, dim, seed):
    """Recompute the pinned anchor block of the generator."""
    a = SplitMix64(derive(seed, 0xA17C)).normal((num_classes, dim))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def test_counts_and_labels():
    ds = synth_dataset(4, 25, 8, seed=1, separation=4.0)
    assert ds.num_records == 100
    assert ds.num_classes == 4
    assert np.array_equal(np.bincount(ds.labels), [25] * 4)
    assert [c.name for c in ds.classes] == [f"class_{k}" for k in range(4)]


def test_determinism(tmp_path):
    a = synth_dataset(5, 6, 8, seed=9, separation=2.0)
    b = synth_dataset(5, 6, 8, seed=9, separation=2.0)
    assert np.array_equal(a.embeddings, b.embeddings)
    assert all(np.array_equal(x.text_embedding, y.text_embedding)
               for x, y in zip(a.classes, b.classes))
    p1, p2 = tmp_path / "1.emb1", tmp_path / "2.emb1"
    write_dataset(a, p1)
    write_dataset(b, p2)
    assert p1.read_bytes() == p2.read_bytes()
    c = synth_dataset(5, 6, 8, seed=10, separation=2.0)
    assert not np.array_equal(a.embeddings, c.embeddings)


def test_infinite_separation_is_noise_free():
    ds = synth_dataset(6, 10, 16, seed=2, separation=np.inf)
    anchors = class_anchors(6, 16, seed=2)
    for k in range(6):
        assert np.allclose(ds.classes[k].text_embedding, anchors[k], atol=1e-15)
        assert np.allclose(ds.embeddings[ds.labels == k], anchors[k][None], atol=1e-15)
    acc = metrics.baseline_zs(ds.embeddings, ds.labels, ds.text_matrix(), range(6))
    assert acc == 100.0


def test_class_mean_converges_to_anchor():
    ds = synth_dataset(3, 200, 16, seed=5, separation=5.0)
    anchors = class_anchors(3, 16, seed=5)
    for k in range(3):
        mean = ds.embeddings[ds.labels == k].mean(axis=0)
        cos = mean @ anchors[k] / np.linalg.norm(mean)
        assert cos > 0.99


def test_unit_norm_rows():
    ds = synth_dataset(3, 5, 8, seed=4, separation=1.0)
    assert np.allclose(np.linalg.norm(ds.embeddings, axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.linalg.norm(ds.text_matrix(), axis=1), 1.0, atol=1e-12)


def test_invalid_arguments():
    for bad in [dict(num_classes=1), dict(per_class=0), dict(dim=1)]:
        kw = dict(num_classes=3, per_class=2, dim=4, seed=1, separation=2.0)
        kw.update(bad)
        with pytest.raises(ValueError):
            synth_dataset(**kw)
    with pytest.raises(ValueError):
        synth_dataset(3, 2, 4, 1, separation=0.0)
    with pytest.raises(ValueError):
        synth_dataset(3, 2, 4, 1, separation=-2.0)


def test_zero_shot_informative_but_imperfect():
    # text anchors carry noise: ZS should beat chance without being perfect
    ds = synth_dataset(10, 40, 16, seed=8, separation=4.0)
    acc = metrics.baseline_zs(ds.embeddings, ds.labels, ds.text_matrix(), range(10))
    assert 15.0 < acc < 95.0
