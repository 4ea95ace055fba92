import math

import numpy as np
import pytest

from lmutree.datagen import ActiveStream
from lmutree.envs import make_env
from lmutree.evaluation import (CurvePoint, consecutive_test, fidelity, fidelity_table, model_fidelity, play_eval,
                                play_table, point_at, write_curve_csv)
from lmutree.lmut import LmutForest

from conftest import make_records


def test_perfect_predictions():
    r = fidelity([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
    assert (r.mae, r.rmse, r.rae, r.rse) == (0.0, 0.0, 0.0, 0.0)


def test_mean_predictor_scores_one():
    y = np.array([1.0, 2.0, 6.0, -3.0])
    r = fidelity(np.full(4, y.mean()), y)
    assert r.rae == pytest.approx(1.0) and r.rse == pytest.approx(1.0)


def test_worked_example():
    r = fidelity([1.0, 1.0], [0.0, 2.0])
    assert (r.mae, r.rmse, r.rae, r.rse) == (1.0, 1.0, 1.0, 1.0)


def test_constant_target_has_no_relative_error():
    r = fidelity([1.0, 2.0], [3.0, 3.0])
    assert r.rae is None and r.rse is None and r.mae == 1.5
    assert "n/a" in fidelity_table([("x", "m", r)])


def test_bad_inputs():
    with pytest.raises(ValueError):
        fidelity([], [])
    with pytest.raises(ValueError):
        fidelity([1.0], [1.0, 2.0])


def test_model_fidelity_counts_leaves(rng):
    X = rng.uniform(size=(10, 2))
    forest = LmutForest(2, 3)
    r = model_fidelity(forest, make_records(X, np.ones(10)))
    assert r.leaf_count == 3 and r.mae == 1.0 and r.n == 10


class Recorder:
    def __init__(self):
        self.seen = 0
        self.calls = []

    def learn(self, batch):
        self.seen += len(batch)

    def predict(self, obs, action):
        self.calls.append(self.seen)
        return 0.0


def batches(n_batches, size, rng):
    return [make_records(rng.normal(size=(size, 1)), rng.normal(size=size)) for _ in range(n_batches)]


def test_consecutive_test_is_test_then_train(rng):
    learner = Recorder()
    curve = consecutive_test(learner, batches(6, 32, rng), eval_window=1000, budget=10_000)
    assert [p.transitions for p in curve] == [32, 64, 96, 128, 160]
    # every prediction used a model that had not seen its batch
    assert learner.calls[:32] == [32] * 32 and learner.calls[-1] == 160
    assert learner.seen == 192


@pytest.mark.parametrize("batch", [32, 100, 64])
def test_curve_length(batch, rng):
    budget = 3000
    stream = batches(math.ceil((budget + batch) / batch), batch, rng)
    curve = consecutive_test(Recorder(), stream, budget=budget)
    assert len(curve) == math.ceil(budget / batch)
    assert curve[-1].transitions >= budget


def test_curve_length_with_active_stream(mc_teacher):
    stream = ActiveStream(make_env("mountain-car"), mc_teacher, 30_000, 32, 0)
    curve = consecutive_test(Recorder(), stream.batches(30_000 + 32), budget=30_000)
    assert len(curve) == math.ceil(30_000 / 32)


def test_point_at():
    curve = [CurvePoint(i + 1, 32 * (i + 1), 1.0 / (i + 1), None) for i in range(10)]
    assert point_at(curve, 100).transitions == 128
    assert point_at(curve, 32).transitions == 32
    assert point_at(curve, 10**6) is curve[-1]


def test_curve_csv(tmp_path):
    path = tmp_path / "c.csv"
    write_curve_csv(path, [CurvePoint(1, 32, 0.5, None)], manifest_line='{"a": 1}')
    lines = path.read_text().splitlines()
    assert lines[0] == '# {"a": 1}' and lines[2] == "1,32,0.5,NA"


class Constant:
    def __init__(self, action, n):
        self.q = np.eye(n)[action]

    def q_vector(self, obs):
        return self.q


def test_play_eval_deterministic(mc_teacher):
    a = play_eval(mc_teacher, "mountain-car", episodes=5, seed=3)
    b = play_eval(mc_teacher, "mountain-car", episodes=5, seed=3)
    assert a == b and len(a.returns) == 5
    assert a.arpe == pytest.approx(np.mean(a.returns))


def test_play_eval_orders_policies(mc_teacher):
    good = play_eval(mc_teacher, "mountain-car", episodes=10).arpe
    idle = play_eval(Constant(1, 3), "mountain-car", episodes=10).arpe
    assert idle == -200.0 and good > idle


def test_play_table_renders():
    r = play_eval(Constant(0, 2), "cart-pole", episodes=3)
    text = play_table([("cart-pole", "const", r)])
    assert "const" in text and f"{r.arpe:.2f}" in text
