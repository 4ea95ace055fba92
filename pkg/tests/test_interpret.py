import numpy as np
import pytest

from lmutree.core import UsageError, cell_contains, cell_intersect
from lmutree.envs import env_spec
from lmutree.interpret import (InfluenceTable, extract_rules, feature_influence, frame_share, pixel_masks,
                               split_influence, superpixels, write_pgm)
from lmutree.lmut import LmutForest, LmutParams

from conftest import make_records


def audit(weights, feature=0, var=4.0, counts=(10, 10), child_vars=(0.0, 0.0)):
    return {"feature": feature, "weights": list(weights), "var": var, "counts": list(counts),
            "child_vars": list(child_vars)}


def test_influence_worked_example():
    assert split_influence(audit([1.0, 0.0])) == 8.0


def test_influence_zero_weights_scale_by_one():
    assert split_influence(audit([0.0, 0.0])) == 4.0


def test_influence_weighting_and_children():
    s = audit([3.0, 4.0], feature=1, var=5.0, counts=(1, 3), child_vars=(2.0, 1.0))
    assert split_influence(s) == pytest.approx((1 + 16 / 25) * (5.0 - (2.0 / 4 + 3.0 / 4)))


def trained(seed=0, n=3000, n_actions=2):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 3))
    a = rng.integers(0, n_actions, size=n)
    q = np.where(X[:, 1] > 0, 4.0, -4.0) + X[:, 0] + a
    forest = LmutForest(3, n_actions, LmutParams(min_split_ratio=0.001))
    recs = make_records(X, q, actions=a)
    for i in range(0, n, 32):
        forest.learn(recs[i:i + 32])
    return forest


def test_influence_is_sum_over_audit_log():
    forest = trained()
    table = feature_influence(forest, ("x", "y", "z"))
    assert forest.leaf_count() > 2
    want = np.zeros(3)
    for tree in forest.trees:
        for s in tree.splits:
            w = np.array(s["weights"])
            n = np.array(s["counts"], float)
            red = s["var"] - n @ np.array(s["child_vars"]) / n.sum()
            want[s["feature"]] += (1 + w[s["feature"]] ** 2 / (w @ w)) * red
            assert red == pytest.approx(s["score"], rel=1e-9, abs=1e-12)
    assert np.max(np.abs(table.influence - want)) <= 1e-12
    assert table.name(table.ranking()[0]) == "y"
    assert len(table.nodes) == sum(len(t.splits) for t in forest.trees)


def test_influence_csv(tmp_path):
    table = InfluenceTable(np.array([0.0, 2.5]), [], ("a", "b"))
    path = tmp_path / "inf.csv"
    table.write_csv(path, manifest_line="{}")
    assert path.read_text().splitlines() == ["# {}", "feature,influence", "b,2.5", "a,0.0"]
    assert table.rows(nonzero_only=True) == [("b", 2.5)]


def test_rules_are_disjoint_and_greedy():
    forest = trained()
    report = extract_rules(forest, top_k=5)
    visited = [leaf for leaf in forest.trees[0].leaves() if leaf.n_seen > 0]
    assert len(report.rules) == min(5, len(visited))
    visits = [r.visits for r in report.rules]
    assert visits == sorted(visits, reverse=True)
    for i, a in enumerate(report.rules):
        for b in report.rules[i + 1:]:
            assert cell_intersect(a.cell, b.cell) is None
    for rule, leaf in zip(report.rules, sorted(visited, key=lambda lf: -lf.n_seen)):
        assert cell_contains(rule.cell, leaf.centroid)
        assert rule.action == forest.greedy(leaf.centroid)
        assert np.array_equal(rule.q, forest.q_vector(leaf.centroid))
    text = report.to_text()
    assert text.count("rule ") == len(report.rules) and "then a" in text


def test_depth_one_tree_gives_two_cells(rng):
    X = rng.uniform(-1, 1, size=(100, 1))
    forest = LmutForest(1, 1)
    forest.gather(make_records(X, X[:, 0]))
    tree = forest.trees[0]
    forest.split_leaf(tree, tree.root, 0, 0.25)
    report = extract_rules(forest, top_k=10, feature_names=("pos",), action_names=("push",))
    cells = sorted(r.cell.describe(("pos",)) for r in report.rules)
    assert cells == ["pos < 0.25", "pos >= 0.25"]
    assert "then push" in report.to_text()
    assert extract_rules(forest, top_k=0).rules == []
    with pytest.raises(ValueError):
        extract_rules(forest, top_k=-1)


BIRD = env_spec("mini-bird")


def bird_forest(rng):
    X = (rng.random((400, BIRD.feature_count)) < 0.5).astype(float)
    q = 2 * X[:, 5] + X[:, 300]
    forest = LmutForest(BIRD.feature_count, 1)
    forest.gather(make_records(X, q))
    tree = forest.trees[0]
    node = forest.split_leaf(tree, tree.root, 5, 0.5)
    forest.split_leaf(tree, node.right, 300, 0.5)
    return forest


def test_superpixels_follow_the_path(rng):
    forest = bird_forest(rng)
    on = np.zeros(BIRD.feature_count)
    on[5] = 1.0
    assert superpixels(forest, on, BIRD, threshold=0.0) == [(0, 0, 5), (1, 2, 12)]
    assert superpixels(forest, np.zeros(BIRD.feature_count), BIRD, threshold=0.0) == [(0, 0, 5)]
    top = feature_influence(forest).influence.max()
    assert superpixels(forest, on, BIRD, threshold=top) == []
    # default threshold is the mean positive influence: only the stronger pixel clears it
    assert superpixels(forest, on, BIRD) == [(0, 0, 5)]


def test_superpixels_edge_cases(rng):
    assert superpixels(LmutForest(BIRD.feature_count, 2), np.zeros(BIRD.feature_count), BIRD) == []
    with pytest.raises(UsageError):
        superpixels(LmutForest(2, 3), [0.0, 0.0], env_spec("mountain-car"))


def test_masks_and_pgm(tmp_path):
    pixels = [(0, 0, 5), (1, 2, 12)]
    mask = pixel_masks(pixels, BIRD)
    assert mask.shape == (4, 16, 16) and mask.sum() == 2 * 255 and mask[1, 2, 12] == 255
    assert frame_share(pixels) == 0.5 and frame_share([]) == 0.0
    path = tmp_path / "m.pgm"
    write_pgm(path, mask[0])
    data = path.read_bytes()
    assert data.startswith(b"P5\n16 16\n255\n") and len(data) == len(b"P5\n16 16\n255\n") + 256
