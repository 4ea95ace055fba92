import math

import numpy as np
import pytest

from lmutree import _sgd
from lmutree.core import DivergedFitError
from lmutree.lmut import Leaf, LmutForest, LmutParams

from conftest import make_records


def test_single_step_bias():
    X = np.array([[0.4, -1.0]])
    w = np.zeros(2)
    b = _sgd.sgd_epochs(X, np.array([5.0]), w, 0.0, 0.1, 1)
    assert b == pytest.approx(0.5)
    assert np.allclose(w, 0.5 * X[0])


def test_one_sample_fits_exactly():
    X = np.array([[0.3, 0.7]])
    y = np.array([2.0])
    w = np.zeros(2)
    b = _sgd.sgd_epochs(X, y, w, 0.0, 0.5, 200)
    assert _sgd.mean_squared_error(X, y, w, b) < 1e-6


def test_kernel_step_is_gradient_descent(rng):
    for _ in range(50):
        x = rng.normal(size=3)
        y = rng.normal()
        w0 = rng.normal(size=3)
        b0 = rng.normal()
        gw, gb = _sgd.sample_gradient(x, y, w0, b0)
        w = w0.copy()
        b = _sgd.sgd_epochs(x[None, :], np.array([y]), w, b0, 0.05, 1)
        assert np.allclose(w, w0 - 0.05 * gw, rtol=0, atol=1e-14)
        assert b == pytest.approx(b0 - 0.05 * gb, abs=1e-14)


def test_gradient_matches_finite_differences(rng):
    h = 1e-6
    for _ in range(20):
        x = rng.normal(size=4)
        y = rng.normal()
        w = rng.normal(size=4)
        b = rng.normal()
        gw, gb = _sgd.sample_gradient(x, y, w, b)
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            fd = (_sgd.sample_loss(x, y, w + e, b) - _sgd.sample_loss(x, y, w - e, b)) / (2 * h)
            assert abs(fd - gw[j]) <= 1e-5 * max(1.0, abs(gw[j]))


def _leaf_with(records, n_features):
    leaf = Leaf(0, n_features, 512)
    for r in records:
        leaf.add(r)
    return leaf


@pytest.mark.parametrize("standardize", [False, True])
def test_error_does_not_grow_across_calls(rng, standardize):
    X = rng.uniform(-1, 1, size=(200, 3))
    q = X @ np.array([1.5, -2.0, 0.5]) + 0.3 + rng.normal(0, 0.1, size=200)
    forest = LmutForest(3, 1, LmutParams(standardize=standardize))
    leaf = _leaf_with(make_records(X, q), 3)
    err = forest.leaf_error(leaf)
    for _ in range(30):
        new = forest.sgd_update(leaf)
        leaf.visits += 200
        assert new <= err + 1e-9
        err = new


def test_scaling_is_a_reparametrisation(rng):
    # both parametrisations fit an exactly linear target
    X = np.column_stack([rng.uniform(-1.2, 0.6, 400), rng.uniform(-0.07, 0.07, 400)])
    q = 3.0 * X[:, 0] - 40.0 * X[:, 1] + 1.0
    recs = make_records(X, q)
    for standardize, alpha in ((True, 0.05), (False, 0.2)):
        forest = LmutForest(2, 1, LmutParams(standardize=standardize, alpha=alpha, epochs=200, alpha_decay=1e12))
        leaf = _leaf_with(recs, 2)
        err = forest.sgd_update(leaf)
        if standardize:
            assert err < 1e-8
            assert np.allclose(leaf.weights, [3.0, -40.0], atol=1e-3) and leaf.bias == pytest.approx(1.0, abs=1e-4)
        else:
            assert err < np.var(q)  # raw features: the small velocity axis converges slowly


def test_divergence_is_reported():
    X = np.array([[1e3, 1e3]] * 4) * np.arange(1, 5)[:, None]
    forest = LmutForest(2, 1, LmutParams(alpha=10.0, standardize=False))
    leaf = _leaf_with(make_records(X, np.arange(4.0)), 2)
    with pytest.raises(DivergedFitError, match="step size|alpha"):
        forest.sgd_update(leaf)


def test_decayed_step_size():
    p = LmutParams()
    assert p.alpha / math.sqrt(1 + 300 / p.alpha_decay) == pytest.approx(0.005)
