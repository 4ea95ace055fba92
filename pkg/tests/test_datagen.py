import numpy as np
import pytest

from lmutree.core import UsageError, argmax_lowest
from lmutree.datagen import ActiveStream, active_play, fold_bounds, fold_split, record_experience
from lmutree.envs import make_env
from lmutree.teacher import default_config


def stream(teacher, budget=1000, batch=32, seed=0, **kw):
    return ActiveStream(make_env("mountain-car"), teacher, budget, batch, seed, **kw)


def test_record_experience_rejects_empty():
    with pytest.raises(ValueError):
        record_experience("mountain-car", n=0)


def test_experience_labels_come_from_final_teacher():
    cfg = default_config("mountain-car", seed=1, episodes=30, threshold=None)
    data = record_experience("mountain-car", cfg, n=2000)
    assert len(data) == 2000
    for r in data.records[::97]:
        assert r.q_hat == data.teacher.q(r.obs, r.action)
    # logged steps are consecutive within an episode
    for a, b in zip(data.records[:200], data.records[1:201]):
        if not a.done:
            assert np.array_equal(a.next_obs, b.obs)
    assert {r.action for r in data.records} <= {0, 1, 2}
    assert sum(len(data.for_action(a)) for a in range(3)) == 2000


@pytest.mark.parametrize("n,k", [(10, 10), (50000, 10), (1234, 7)])
def test_folds_partition(n, k):
    bounds = fold_bounds(n, k)
    assert bounds[0][0] == 0 and bounds[-1][1] == n
    assert all(a[1] == b[0] for a, b in zip(bounds, bounds[1:]))
    sizes = [b - a for a, b in bounds]
    assert max(sizes) - min(sizes) <= 1


def test_fold_split():
    data = list(range(100))
    train, test = fold_split(data, 9, 10)
    assert test == list(range(90, 100)) and train == list(range(90))
    with pytest.raises(ValueError):
        fold_bounds(3, 10)


def test_greedy_stream_follows_teacher(mc_teacher):
    s = stream(mc_teacher, epsilon_start=0.0, epsilon_end=0.0)
    for r in s.take(500):
        q = mc_teacher.q_vector(r.obs)
        assert r.action == argmax_lowest(q) and r.q_hat == q[r.action]


def test_random_stream_is_uniform(mc_teacher):
    s = stream(mc_teacher, budget=10_000, epsilon_start=1.0, epsilon_end=1.0)
    counts = np.bincount([r.action for r in s.take(10_000)], minlength=3)
    sd = np.sqrt(10_000 * (1 / 3) * (2 / 3))
    assert np.all(np.abs(counts - 10_000 / 3) <= 3 * sd)


def test_epsilon_schedule(mc_teacher):
    s = stream(mc_teacher, budget=1000, decay_fraction=0.5)
    assert s.epsilon(0) == 1.0
    assert s.epsilon(250) == pytest.approx(0.5)
    assert s.epsilon(500) == 0.0 and s.epsilon(900) == 0.0


def test_batch_is_a_chain(mc_teacher):
    batch = stream(mc_teacher).next_batch()
    assert len(batch) == 32
    for a, b in zip(batch, batch[1:]):
        assert a.done or np.array_equal(a.next_obs, b.obs)


def test_batch_larger_than_budget(mc_teacher):
    s = stream(mc_teacher, budget=10, batch=32)
    batches = list(s.batches())
    assert [len(b) for b in batches] == [10]


def test_batches_cover_total(mc_teacher):
    s = stream(mc_teacher, budget=100, batch=32)
    assert [len(b) for b in s.batches()] == [32, 32, 32, 4]


def test_stream_is_deterministic(mc_teacher):
    a = stream(mc_teacher, seed=5).take(300)
    b = stream(mc_teacher, seed=5).take(300)
    assert a == b
    assert stream(mc_teacher, seed=6).take(300) != a


def test_closed_stream_raises(mc_teacher):
    s = stream(mc_teacher)
    s.close()
    with pytest.raises(UsageError):
        s.next_batch()


def test_invalid_stream_arguments(mc_teacher):
    with pytest.raises(ValueError):
        stream(mc_teacher, budget=0)
    with pytest.raises(ValueError):
        stream(mc_teacher, batch=0)


def test_active_play_values_rise(mc_teacher):
    recs = active_play("mountain-car", mc_teacher, 5000, seed=0)
    q = np.array([r.q_hat for r in recs])
    assert len(recs) == 5000
    # later queries follow the greedy policy and sit in higher-value regions
    assert q[-500:].mean() >= q[:500].mean()
