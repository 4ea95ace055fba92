import json

import numpy as np
import pytest

from lmutree.core import TrainingFailure, UsageError
from lmutree.envs import make_env
from lmutree.teacher import (TILE_BOUNDS, MlpTeacher, TeacherConfig, TileCoder, TileTeacher, default_config,
                             load_teacher, teacher_greedy, teacher_q, train_teacher)


def small_tile_teacher(gamma=0.9):
    coder = TileCoder(TILE_BOUNDS["mountain-car"], tilings=4, bins=4)
    t = TileTeacher(coder, 3, gamma, "mountain-car")
    t.trained = True
    return t


def test_tile_indices_in_range(rng):
    coder = TileCoder(TILE_BOUNDS["cart-pole"])
    for _ in range(200):
        idx = coder.indices(rng.uniform(-5, 5, size=4))
        assert idx.shape == (coder.tilings,)
        assert np.all((0 <= idx) & (idx < coder.tiles_per_tiling))


def test_tile_lookup_matches_table(rng):
    t = small_tile_teacher()
    t.table = rng.normal(size=t.table.shape)
    obs = np.array([-0.3, 0.01])
    tiles = t.coder.indices(obs)
    want = sum(t.table[k, tiles[k]] for k in range(t.coder.tilings))
    assert np.allclose(t.q_vector(obs), want, rtol=0, atol=1e-12)
    assert teacher_q(t, obs, 2) == t.q_vector(obs)[2]
    assert teacher_q(t, obs, 2) == teacher_q(t, obs, 2)


def test_zero_discount_target_is_reward():
    t = small_tile_teacher(gamma=0.0)
    s, s2 = t.coder.indices([-0.5, 0.0]), t.coder.indices([-0.45, 0.01])
    t.table[:, s2, :] = 100.0  # a large successor value must not leak in
    t.td_update(s, 1, 3.5, s2, False, alpha=1.0)
    assert t.q_vector([-0.5, 0.0])[1] == pytest.approx(3.5)


def test_terminal_target_ignores_successor():
    t = small_tile_teacher(gamma=0.9)
    s, s2 = t.coder.indices([-0.5, 0.0]), t.coder.indices([0.2, 0.05])
    t.table[:, s2, :] = 50.0
    t.td_update(s, 0, -1.0, s2, True, alpha=1.0)
    assert t.q_vector([-0.5, 0.0])[0] == pytest.approx(-1.0)


def test_greedy_tie_rule():
    t = small_tile_teacher()
    assert teacher_greedy(t, [-0.5, 0.0]) == 0


def test_untrained_teacher_raises():
    t = TileTeacher(TileCoder(TILE_BOUNDS["mountain-car"]), 3, 0.9)
    with pytest.raises(UsageError):
        t.q_vector([0.0, 0.0])


def test_mlp_forward_matches_independent_recomputation(rng):
    m = MlpTeacher([5, 7, 4, 3], 0.9, rng)
    m.trained = True
    d = json.loads(json.dumps(m.to_dict()))
    x = rng.normal(size=5)
    h = x
    layers = d["layers"]
    for i, layer in enumerate(layers):
        w = np.array(layer["weights"]).reshape(layer["shape"])
        h = h @ w + np.array(layer["bias"])
        if i < len(layers) - 1:
            h = np.maximum(h, 0)
    assert np.allclose(m.q_vector(x), h, rtol=1e-12, atol=1e-12)
    assert np.array_equal(load_teacher(d).q_vector(x), m.q_vector(x))


def test_mlp_gradients_match_finite_differences(rng):
    m = MlpTeacher([4, 6, 2], 0.9, rng)
    obs = rng.normal(size=(5, 4))
    actions = rng.integers(0, 2, size=5)
    targets = rng.normal(size=5)
    _, grads = m.td_loss_and_grads(obs, actions, targets)
    h = 1e-6
    for p, g in zip(m.params, grads):
        flat = p.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 7)):
            old = flat[i]
            flat[i] = old + h
            up, _ = m.td_loss_and_grads(obs, actions, targets)
            flat[i] = old - h
            down, _ = m.td_loss_and_grads(obs, actions, targets)
            flat[i] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - g.reshape(-1)[i]) <= 1e-5 * max(1.0, abs(fd))


def test_save_load_round_trip(tmp_path):
    t = small_tile_teacher()
    t.table[:] = np.random.default_rng(1).normal(size=t.table.shape)
    path = tmp_path / "t.json"
    t.save(path)
    back = load_teacher(path)
    assert back.fingerprint() == t.fingerprint()
    assert np.array_equal(back.q_vector([-0.2, 0.03]), t.q_vector([-0.2, 0.03]))


def test_config_validation():
    with pytest.raises(ValueError):
        TeacherConfig(gamma=1.0)
    with pytest.raises(ValueError):
        TeacherConfig(kind="lookup")
    with pytest.raises(ValueError):
        TeacherConfig(epsilon_start=1.5)


def test_training_is_deterministic():
    cfg = default_config("mountain-car", episodes=20, eval_every=0, threshold=None, seed=5)
    a = train_teacher(make_env("mountain-car"), cfg)
    b = train_teacher(make_env("mountain-car"), cfg)
    assert a.fingerprint() == b.fingerprint()


def test_threshold_failure_reports_achieved():
    cfg = default_config("cart-pole", episodes=3, eval_every=0, threshold=199.0, eval_episodes=5)
    with pytest.raises(TrainingFailure) as info:
        train_teacher("cart-pole", cfg)
    assert info.value.achieved < 199.0


def test_mlp_teacher_trains_briefly():
    cfg = default_config("mini-bird", episodes=30, warmup=50, eval_every=0, seed=1)
    t = train_teacher("mini-bird", cfg)
    q = t.q_vector(make_env("mini-bird").reset(0))
    assert q.shape == (2,) and np.all(np.isfinite(q))
