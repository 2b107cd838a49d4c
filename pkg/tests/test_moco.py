import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvmf_lab.moco import DESK_QUEUE_SIZE, PAPER_QUEUE_SIZE, MomentumQueue, ema_update
from tvmf_lab.net import init_params

from helpers import unit_rows


def test_queue_size_constants():
    assert PAPER_QUEUE_SIZE == 65536 and DESK_QUEUE_SIZE == 4096


def test_ema_degenerate_and_midpoint():
    online = init_params(3, (4,), 2, 2, seed=0)
    target = init_params(3, (4,), 2, 2, seed=1)
    before = [a.copy() for a in target.arrays()]
    ema_update(target, online, 1.0)
    assert all(np.array_equal(a, b) for a, b in zip(target.arrays(), before))
    ema_update(target, online, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(target.arrays(), online.arrays()))
    zero = online.zeros_like()
    two = online.zeros_like()
    for a in two.arrays():
        a += 2.0
    ema_update(zero, two, 0.5)
    assert all(np.all(a == 1.0) for a in zero.arrays())


def test_ema_drift_shrinks_by_momentum():
    online = init_params(3, (4,), 2, 2, seed=2)
    target = init_params(3, (4,), 2, 2, seed=3)
    gap = lambda: max(np.max(np.abs(t - o)) for t, o in zip(target.arrays(), online.arrays()))  # noqa: E731
    before = gap()
    ema_update(target, online, 0.9)
    assert gap() == pytest.approx(0.9 * before, rel=1e-12)


def test_ema_errors_and_version_bump():
    online = init_params(3, (4,), 2, 2, seed=0)
    other = init_params(3, (5,), 2, 2, seed=0)
    with pytest.raises(ValueError):
        ema_update(other, online, 0.5)
    with pytest.raises(ValueError):
        ema_update(online.copy(), online, 1.5)
    target = online.copy()
    v = target.version
    ema_update(target, online, 0.5)
    assert target.version != v


def test_fifo_eviction_example():
    q = MomentumQueue(4, 2)
    rng = np.random.default_rng(0)
    first, second = unit_rows(rng, 3, 2), unit_rows(rng, 3, 2)
    q.enqueue(first, [0, 1, 2])
    q.enqueue(second, [3, 4, 5])
    emb, labels = q.contents()
    assert len(q) == 4
    assert labels.tolist() == [2, 3, 4, 5]
    np.testing.assert_array_equal(emb, np.vstack([first[2:], second]))
    np.testing.assert_allclose(np.linalg.norm(emb, axis=1), 1.0, atol=1e-12)


def test_enqueue_errors():
    q = MomentumQueue(2, 3)
    with pytest.raises(ValueError):
        q.enqueue(unit_rows(np.random.default_rng(0), 3, 3), [0, 0, 0])
    with pytest.raises(ValueError):
        q.enqueue(np.ones((1, 3)), [0])
    with pytest.raises(ValueError):
        q.enqueue(unit_rows(np.random.default_rng(0), 1, 2), [0])
    with pytest.raises(ValueError):
        MomentumQueue(0, 3)
    with pytest.raises(ValueError):
        MomentumQueue(2, 3).update_target(init_params(2, (), 2, 3, seed=0))


def test_split_pos_neg():
    q = MomentumQueue(8, 2)
    q.enqueue(unit_rows(np.random.default_rng(1), 3, 2), [0, 1, 0])
    pos, neg = q.split_pos_neg(0)
    assert pos.tolist() == [0, 2] and neg.tolist() == [1]
    pos, neg = q.split_pos_neg(7)
    assert pos.size == 0 and neg.tolist() == [0, 1, 2]
    empty = MomentumQueue(3, 2)
    assert [a.size for a in empty.split_pos_neg(0)] == [0, 0]


def test_partition_covers_fill():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        cap = int(rng.integers(1, 20))
        q = MomentumQueue(cap, 2)
        for _ in range(int(rng.integers(0, 4))):
            n = int(rng.integers(1, cap + 1))
            q.enqueue(unit_rows(rng, n, 2), rng.integers(0, 3, n))
        pos, neg = q.split_pos_neg(int(rng.integers(0, 3)))
        assert pos.size + neg.size == len(q)
        assert set(pos.tolist()).isdisjoint(neg.tolist())


def test_model_based_against_list():
    rng = np.random.default_rng(3)
    ops = 0
    while ops < 10_000:
        cap = int(rng.integers(1, 33))
        q = MomentumQueue(cap, 3)
        model: list[tuple[int, bytes]] = []
        counter = 0
        for _ in range(200):
            kind = rng.random()
            if kind < 0.6:
                n = int(rng.integers(1, cap + 1))
                rows = unit_rows(rng, n, 3)
                labels = np.arange(counter, counter + n)
                counter += n
                q.enqueue(rows, labels)
                model.extend((int(l), r.tobytes()) for l, r in zip(labels, rows))
                model = model[-cap:]
            elif kind < 0.8:
                emb, labels = q.contents()
                assert labels.tolist() == [l for l, _ in model]
                assert [r.tobytes() for r in emb] == [r for _, r in model]
            else:
                raw_emb, raw_labels = q.raw()
                assert sorted(raw_labels.tolist()) == sorted(l for l, _ in model)
            assert len(q) == len(model)
            ops += 1


@settings(max_examples=100)
@given(st.integers(1, 16), st.lists(st.integers(1, 16), max_size=12))
def test_last_k_rows_in_order(cap, sizes):
    q = MomentumQueue(cap, 2)
    rng = np.random.default_rng(cap)
    seen = []
    for n in sizes:
        n = min(n, cap)
        rows = unit_rows(rng, n, 2)
        q.enqueue(rows, np.arange(len(seen), len(seen) + n))
        seen.extend(range(len(seen), len(seen) + n))
    _, labels = q.contents()
    assert labels.tolist() == seen[-cap:] if seen else labels.size == 0
