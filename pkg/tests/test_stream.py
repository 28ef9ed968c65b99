import numpy as np
import pytest

from projfusion.errors import StreamError
from projfusion.stream import make_task_stream, task_view
from projfusion.synth import synth_dataset


def test_base0_splits():
    s = make_task_stream(100, base=0, inc=10, seed=1993)
    assert s.num_tasks == 10
    assert all(len(t) == 10 for t in s.tasks)
    assert sorted(c for t in s.tasks for c in t) == list(range(100))


def test_base50_splits():
    s = make_task_stream(100, base=50, inc=10, seed=1)
    assert [len(t) for t in s.tasks] == [50, 10, 10, 10, 10, 10]


def test_determinism_and_seed_sensitivity():
    a = make_task_stream(40, 0, 4, seed=7)
    b = make_task_stream(40, 0, 4, seed=7)
    c = make_task_stream(40, 0, 4, seed=8)
    assert a.class_order == b.class_order
    assert a.tasks == b.tasks
    assert a.class_order != c.class_order


def test_pure_function_of_count():
    ds = synth_dataset(12, 3, 8, seed=2, separation=3.0)
    assert make_task_stream(ds, 0, 3, seed=5) == make_task_stream(12, 0, 3, seed=5)


def test_rejects_bad_geometry():
    with pytest.raises(StreamError):
        make_task_stream(10, base=0, inc=3, seed=1)  # 10 not divisible by 3
    with pytest.raises(StreamError):
        make_task_stream(10, base=4, inc=4, seed=1)  # 6 remaining, not 4k
    with pytest.raises(StreamError):
        make_task_stream(10, base=12, inc=1, seed=1)
    with pytest.raises(StreamError):
        make_task_stream(10, base=0, inc=0, seed=1)
    with pytest.raises(StreamError):
        make_task_stream(0, base=0, inc=1, seed=1)
    with pytest.raises(StreamError):
        make_task_stream(10, base=-1, inc=1, seed=1)


def test_task_view_partition():
    ds = synth_dataset(12, 5, 8, seed=3, separation=3.0)
    stream = make_task_stream(ds, base=6, inc=2, seed=11)
    assert stream.num_tasks == 4
    for b in range(1, 5):
        view = task_view(stream, ds, b)
        current = set(stream.tasks[b - 1])
        assert set(np.unique(view.labels)) == current
        assert view.embeddings.shape[0] == 5 * len(current)
        assert set(view.seen) | set(view.unseen) == set(range(12))
        assert set(view.seen) & set(view.unseen) == set()
        assert set(view.seen) >= current
    last = task_view(stream, ds, 4)
    assert last.unseen == ()
    assert len(task_view(stream, ds, 3).seen) == 6 + 2 + 2


def test_task_view_range_errors():
    ds = synth_dataset(4, 2, 8, seed=3, separation=3.0)
    stream = make_task_stream(ds, 0, 2, seed=1)
    with pytest.raises(StreamError):
        task_view(stream, ds, 0)
    with pytest.raises(StreamError):
        task_view(stream, ds, 3)


def test_seen_before_order_matches_arrival():
    s = make_task_stream(9, 0, 3, seed=4)
    assert s.seen_before(2) == s.tasks[0] + s.tasks[1]
