"""Linear Model U-Trees.

A forest holds one binary tree per action.  Internal nodes split on
``feature < threshold`` (left) versus ``>=`` (right); leaves hold a linear
model over the observation, a bounded FIFO buffer of recent transitions and,
optionally, statistics of the leaf-level MDP.

Learning alternates two phases per minibatch:

1. ``gather``: route each transition to the leaf of its action's tree, buffer
   it and update the MDP statistics.
2. ``split_phase``: refit every leaf that received data with per-sample SGD;
   when SGD stops improving, split the leaf on the distinction with the
   largest variance reduction of the buffered Q-hat values.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.sparse as sp

from . import _sgd
from .core import Cell, DivergedFitError, Transition, UsageError, argmax_lowest

TERMINAL = "T"
TIE_TOL = 1e-12  # relative gap below which two split scores count as tied


@dataclass
class LmutParams:
    min_improvement: float = 0.05
    min_split_ratio: float = 0.01  # minSplit as a fraction of the root Q-hat variance
    min_split: float | None = None  # absolute minSplit; overrides the ratio when set
    flag_mdp: bool = False
    epochs: int = 10
    alpha: float = 0.01
    alpha_decay: float = 100.0  # alpha = alpha0 / sqrt(1 + visits / alpha_decay)
    buffer_capacity: int = 512
    min_child: int = 16
    candidates: int = 20
    gate: str = "relative"  # or "absolute-error"
    fit_floor: float = 1e-4  # leaves with err below fit_floor * root variance are not split
    gamma: float = 0.99
    standardize: bool = True  # run SGD on features min-max scaled over the buffer

    def __post_init__(self):
        if not 0 <= self.min_improvement <= 1:
            raise ValueError("min_improvement must lie in [0, 1]")
        if self.epochs < 1 or self.alpha <= 0 or self.alpha_decay <= 0 or self.buffer_capacity < 1:
            raise ValueError("epochs, alpha, alpha_decay and buffer_capacity must be positive")
        if self.min_child < 1 or self.candidates < 1:
            raise ValueError("min_child and candidates must be positive")
        if self.gate not in ("relative", "absolute-error"):
            raise ValueError(f"unknown gate {self.gate!r}")
        if self.min_split is not None and self.min_split < 0:
            raise ValueError("min_split must be non-negative")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# --- MDP statistics ----------------------------------------------------------------


class MdpStats:
    """Transition counts, probabilities and rewards for one (leaf, action) pair."""

    __slots__ = ("count", "succ", "q_avg")

    def __init__(self):
        self.count = 0
        self.succ = {}  # successor -> [count, P, R]
        self.q_avg = 0.0

    def update(self, successor, reward, q_hat=0.0):
        entry = self.succ.get(successor)
        if entry is None:
            entry = self.succ[successor] = [0, 0.0, 0.0]
        c = entry[0]
        total = sum(e[0] for e in self.succ.values())
        entry[1] = (c + 1) / (total + 1)
        entry[2] = (entry[2] * c + reward) / (c + 1)
        self.q_avg = (self.q_avg * self.count + q_hat) / (self.count + 1)
        self.count += 1
        entry[0] += 1

    def normalized(self):
        """(successor, P-tilde, R) with P-tilde summing to one over observed successors."""
        total = sum(e[1] for e in self.succ.values())
        return [(s, e[1] / total, e[2]) for s, e in self.succ.items()]

    def to_dict(self):
        return {
            "count": self.count,
            "q_avg": self.q_avg,
            "succ": [[str(s), e[0], e[1], e[2]] for s, e in self.succ.items()],
        }

    @classmethod
    def from_dict(cls, d):
        m = cls()
        m.count = d["count"]
        m.q_avg = d["q_avg"]
        for s, c, p, r in d["succ"]:
            m.succ[s if s == TERMINAL else int(s)] = [c, p, r]
        return m


# --- nodes -------------------------------------------------------------------------------


class Node:
    __slots__ = ("id",)

    is_leaf = False


class Internal(Node):
    __slots__ = ("feature", "threshold", "left", "right")

    def __init__(self, node_id, feature, threshold, left, right):
        self.id = node_id
        self.feature = int(feature)
        self.threshold = float(threshold)
        self.left = left
        self.right = right


class Leaf(Node):
    __slots__ = ("weights", "bias", "buffer", "visits", "var", "obs_sum", "n_seen", "mdp", "fresh", "_cache")

    is_leaf = True

    def __init__(self, node_id, n_features, capacity, weights=None, bias=0.0):
        self.id = node_id
        self.weights = np.zeros(n_features) if weights is None else np.array(weights, dtype=np.float64)
        self.bias = float(bias)
        self.buffer = deque(maxlen=capacity)
        self.visits = 0
        self.var = 0.0
        self.obs_sum = np.zeros(n_features)
        self.n_seen = 0
        self.mdp = None
        self.fresh = False  # received data since the last split phase
        self._cache = None

    def predict(self, obs) -> float:
        return float(np.dot(self.weights, obs) + self.bias)

    def add(self, rec: Transition):
        self.buffer.append(rec)
        self.visits += 1
        self.obs_sum += rec.obs
        self.n_seen += 1
        self.fresh = True
        self._cache = None

    def arrays(self):
        """Buffered observations and Q-hat labels as arrays (oldest first)."""
        if self._cache is None:
            X = np.stack([r.obs for r in self.buffer])
            y = np.array([r.q_hat for r in self.buffer])
            self._cache = (X, y)
        return self._cache

    @property
    def centroid(self):
        if self.n_seen == 0:
            return None
        return self.obs_sum / self.n_seen


# --- tree ------------------------------------------------------------------------------


class LmutTree:
    def __init__(self, n_features: int, action: int, params: LmutParams):
        self.n_features = n_features
        self.action = action
        self.params = params
        self.next_id = 1
        self.root = Leaf(0, n_features, params.buffer_capacity)
        self.splits = []  # audit log of accepted splits
        # running mean/variance of every gathered Q-hat (Welford)
        self.q_n = 0
        self.q_mean = 0.0
        self.q_m2 = 0.0

    @property
    def root_var(self) -> float:
        return self.q_m2 / self.q_n if self.q_n else 0.0

    def min_split(self) -> float:
        if self.params.min_split is not None:
            return self.params.min_split
        return self.params.min_split_ratio * self.root_var

    def observe_q(self, q):
        self.q_n += 1
        d = q - self.q_mean
        self.q_mean += d / self.q_n
        self.q_m2 += d * (q - self.q_mean)

    def route(self, obs) -> Leaf:
        node = self.root
        while not node.is_leaf:
            node = node.left if obs[node.feature] < node.threshold else node.right
        return node

    def path(self, obs):
        """Internal nodes visited from the root to the leaf of ``obs``."""
        out = []
        node = self.root
        while not node.is_leaf:
            out.append(node)
            node = node.left if obs[node.feature] < node.threshold else node.right
        return out

    def leaves(self):
        """Leaves in left-to-right order."""
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def leaf_cells(self):
        """(leaf, cell) pairs in left-to-right order."""
        out = []
        stack = [(self.root, Cell.full(self.n_features))]
        while stack:
            node, cell = stack.pop()
            if node.is_leaf:
                out.append((node, cell))
            else:
                stack.append((node.right, cell.restrict(node.feature, node.threshold, left=False)))
                stack.append((node.left, cell.restrict(node.feature, node.threshold, left=True)))
        return out

    def depth(self):
        def rec(n):
            return 0 if n.is_leaf else 1 + max(rec(n.left), rec(n.right))

        return rec(self.root)

    def replace(self, old: Node, new: Node):
        if self.root is old:
            self.root = new
            return
        stack = [self.root]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                continue
            if n.left is old:
                n.left = new
                return
            if n.right is old:
                n.right = new
                return
            stack.extend((n.left, n.right))
        raise KeyError("node not in tree")

    def _new_id(self):
        i = self.next_id
        self.next_id += 1
        return i


# --- split search ---------------------------------------------------------------------------


def get_distinctions(X: np.ndarray, min_child: int, max_candidates: int):
    """Candidate (feature, threshold) splits of the buffered observations ``X``.

    Thresholds are midpoints between consecutive distinct values.  Midpoints
    leaving fewer than ``min_child`` rows on either side are dropped, and the
    rest are thinned to ``max_candidates`` evenly spaced order statistics.
    """
    m, n = X.shape
    out = []
    if m < 2 * min_child:
        return out
    varying = np.flatnonzero(X.min(axis=0) < X.max(axis=0))
    for f in varying:
        col = np.sort(X[:, f])
        vals = np.unique(col)
        left = np.searchsorted(col, vals[:-1], side="right")
        ok = (left >= min_child) & (m - left >= min_child)
        if not ok.any():
            continue
        lo, hi = vals[:-1][ok], vals[1:][ok]
        mids = (lo + hi) / 2
        mids = np.where(mids > lo, mids, hi)  # adjacent floats: keep lo on the left
        if mids.shape[0] > max_candidates:
            idx = np.round(np.linspace(0, mids.shape[0] - 1, max_candidates)).astype(np.int64)
            mids = mids[idx]
        out.extend((int(f), float(t)) for t in mids)
    return out


def variance_reduction(q: np.ndarray, left_mask: np.ndarray) -> float:
    """Variance of ``q`` minus the size-weighted variances of the two sides."""
    n = q.shape[0]
    nl = int(left_mask.sum())
    if nl == 0 or nl == n:
        return -math.inf
    ql, qr = q[left_mask], q[~left_mask]
    return float(np.var(q) - (nl / n) * np.var(ql) - ((n - nl) / n) * np.var(qr))


def split_score(leaf: Leaf, distinction) -> float:
    f, t = distinction
    X, y = leaf.arrays()
    return variance_reduction(y, X[:, f] < t)


def score_distinctions(X, q, distinctions):
    """Vectorised variance reduction for each distinction.

    Distinctions inducing the same partition as an earlier one score -inf so
    ties resolve to the lowest feature, then the lowest threshold.
    """
    if not distinctions:
        return np.empty(0)
    feats = np.fromiter((d[0] for d in distinctions), dtype=np.int64, count=len(distinctions))
    thr = np.fromiter((d[1] for d in distinctions), dtype=np.float64, count=len(distinctions))
    masks = X[:, feats] < thr[None, :]
    m = q.shape[0]
    qc = q - q.mean()
    total = qc.sum()
    nl = masks.sum(axis=0).astype(np.float64)
    nr = m - nl
    sl = qc @ masks
    sr = total - sl
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = (sl * sl / nl + sr * sr / nr - total * total / m) / m
    scores[(nl == 0) | (nr == 0)] = -np.inf
    packed = np.packbits(masks, axis=0).T
    seen = set()
    for i, row in enumerate(packed):
        key = row.tobytes()
        if key in seen:
            scores[i] = -np.inf
        else:
            seen.add(key)
    return scores


def best_distinction(leaf: Leaf, min_split: float, min_child: int, max_candidates: int):
    """Highest-scoring distinction with score >= ``min_split`` and > 0, or None."""
    X, y = leaf.arrays()
    cands = get_distinctions(X, min_child, max_candidates)
    if not cands:
        return None
    scores = score_distinctions(X, y, cands)
    best = scores.max()
    # candidates come sorted by feature then threshold; equal scores (up to
    # rounding) resolve to the first of them
    i = int(np.flatnonzero(scores >= best - TIE_TOL * max(1.0, abs(best)))[0])
    p = scores[i]
    if not (p >= min_split and p > 0):
        return None
    return cands[i], float(p)


# --- forest ----------------------------------------------------------------------------------


class LmutForest:
    def __init__(self, n_features: int, n_actions: int, params: LmutParams | None = None):
        self.n_features = int(n_features)
        self.n_actions = int(n_actions)
        self.params = params or LmutParams()
        self.trees = [LmutTree(self.n_features, a, self.params) for a in range(self.n_actions)]
        self._pending = False

    # prediction
    def predict(self, obs, action: int) -> float:
        obs = self._check(obs)
        return self.trees[action].route(obs).predict(obs)

    def q_vector(self, obs) -> np.ndarray:
        obs = self._check(obs)
        return np.array([t.route(obs).predict(obs) for t in self.trees])

    def greedy(self, obs) -> int:
        return argmax_lowest(self.q_vector(obs))

    def _check(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.n_features,):
            raise ValueError(f"observation shape {obs.shape}, expected ({self.n_features},)")
        return obs

    def leaf_count(self) -> int:
        return sum(len(t.leaves()) for t in self.trees)

    # learning
    def gather(self, batch):
        """Data gathering phase: buffer each transition at its leaf."""
        if len(batch) == 0:
            raise ValueError("empty batch")
        for rec in batch:
            if rec.obs.shape[0] != self.n_features:
                raise ValueError("transition has wrong feature count")
            tree = self.trees[rec.action]
            leaf = tree.route(rec.obs)
            tree.observe_q(rec.q_hat)
            if self.params.flag_mdp:
                self._update_mdp(tree, leaf, rec)
            leaf.add(rec)
        self._pending = True

    def _update_mdp(self, tree, leaf, rec):
        if leaf.mdp is None:
            leaf.mdp = MdpStats()
        succ = TERMINAL if rec.done else tree.route(rec.next_obs).id
        leaf.mdp.update(succ, rec.reward, rec.q_hat)

    def rebuild_mdp(self, tree: LmutTree):
        """Recompute every leaf's MDP statistics by replaying its buffer."""
        leaves = tree.leaves()
        for leaf in leaves:
            leaf.mdp = None
        for leaf in leaves:
            for rec in leaf.buffer:
                self._update_mdp(tree, leaf, rec)

    def sgd_update(self, leaf: Leaf):
        """Refit the leaf's linear model; returns the post-fit training MSE."""
        X, y = leaf.arrays()
        alpha = self.params.alpha / math.sqrt(1.0 + leaf.visits / self.params.alpha_decay)
        if self.params.standardize:
            # same linear model, reparametrized on z = (x - lo) / (hi - lo)
            mu = X.min(axis=0)
            sd = X.max(axis=0) - mu
            sd[sd < 1e-12] = 1.0
            w = leaf.weights * sd
            b = _sgd.sgd_epochs((X - mu) / sd, y, w, leaf.bias + float(leaf.weights @ mu), alpha, self.params.epochs)
            w = w / sd
            b = b - float(w @ mu)
        else:
            w = leaf.weights.copy()
            b = _sgd.sgd_epochs(X, y, w, leaf.bias, alpha, self.params.epochs)
        if not (np.all(np.isfinite(w)) and math.isfinite(b)):
            raise DivergedFitError(
                f"SGD diverged at leaf {leaf.id} (alpha={alpha:.3g}, max |x|={np.abs(X).max():.3g}); "
                "lower the step size"
            )
        err = _sgd.mean_squared_error(X, y, w, b)
        if not math.isfinite(err):
            raise DivergedFitError(f"training error overflowed at leaf {leaf.id} (alpha={alpha:.3g})")
        leaf.weights, leaf.bias = w, b
        return err

    def leaf_error(self, leaf: Leaf) -> float:
        X, y = leaf.arrays()
        return _sgd.mean_squared_error(X, y, leaf.weights, leaf.bias)

    def split_phase(self):
        """Node splitting phase over every leaf that received data."""
        if not self._pending:
            raise UsageError("split_phase() requires gather() since the last split phase")
        p = self.params
        for tree in self.trees:
            split_any = False
            for leaf in tree.leaves():
                if not leaf.fresh:
                    continue
                leaf.fresh = False
                X, y = leaf.arrays()
                leaf.var = float(np.var(y))
                err_before = self.leaf_error(leaf)
                err = self.sgd_update(leaf)
                if p.gate == "relative":
                    improvement = (err_before - err) / max(err_before, 1e-300)
                    attempt = improvement <= p.min_improvement and err > p.fit_floor * tree.root_var
                else:
                    attempt = err <= p.min_improvement
                if not attempt:
                    continue
                found = best_distinction(leaf, tree.min_split(), p.min_child, p.candidates)
                if found is None:
                    continue
                (f, t), score = found
                self.split_leaf(tree, leaf, f, t, score)
                split_any = True
            if split_any and p.flag_mdp:
                self.rebuild_mdp(tree)
        self._pending = False

    def split_leaf(self, tree: LmutTree, leaf: Leaf, feature: int, threshold: float, score=None):
        """Replace ``leaf`` by an internal node with two children inheriting its weights."""
        X, y = leaf.arrays()
        mask = X[:, feature] < threshold
        kids = []
        for side in (mask, ~mask):
            child = Leaf(tree._new_id(), self.n_features, self.params.buffer_capacity, leaf.weights, leaf.bias)
            for i in np.flatnonzero(side):
                rec = leaf.buffer[i]
                child.buffer.append(rec)
                child.obs_sum += rec.obs
            child.n_seen = child.visits = len(child.buffer)
            child.var = float(np.var(y[side])) if side.any() else 0.0
            kids.append(child)
        left, right = kids
        var_parent = float(np.var(y))
        tree.splits.append({
            "node": leaf.id,
            "feature": int(feature),
            "threshold": float(threshold),
            "var": var_parent,
            "counts": [len(left.buffer), len(right.buffer)],
            "child_vars": [left.var, right.var],
            "weights": leaf.weights.tolist(),
            "score": var_parent if score is None else float(score),
            "children": [left.id, right.id],
        })
        node = Internal(leaf.id, feature, threshold, left, right)
        tree.replace(leaf, node)
        for child in kids:
            if child.buffer:
                self.sgd_update(child)
        return node

    def learn(self, batch):
        self.gather(batch)
        self.split_phase()

    # serialization
    def to_dict(self, include_buffers=False) -> dict:
        return {
            "format": "lmutree-forest",
            "n_features": self.n_features,
            "n_actions": self.n_actions,
            "params": asdict(self.params),
            "trees": [_tree_to_dict(t, include_buffers) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "LmutForest":
        forest = cls(d["n_features"], d["n_actions"], LmutParams.from_dict(d["params"]))
        forest.trees = [_tree_from_dict(td, forest) for td in d["trees"]]
        return forest

    def to_json(self, include_buffers=False) -> str:
        return json.dumps(self.to_dict(include_buffers), sort_keys=True)

    @classmethod
    def from_json(cls, text) -> "LmutForest":
        return cls.from_dict(json.loads(text))


def _node_to_dict(node, include_buffers):
    if not node.is_leaf:
        return {
            "id": node.id,
            "feature": node.feature,
            "threshold": node.threshold,
            "left": _node_to_dict(node.left, include_buffers),
            "right": _node_to_dict(node.right, include_buffers),
        }
    d = {
        "id": node.id,
        "weights": node.weights.tolist(),
        "bias": node.bias,
        "count": node.visits,
        "var": node.var,
        "n_seen": node.n_seen,
        "obs_sum": node.obs_sum.tolist(),
    }
    if node.mdp is not None:
        d["mdp"] = node.mdp.to_dict()
    if include_buffers:
        d["buffer"] = [r.to_dict() for r in node.buffer]
    return d


def _node_from_dict(d, forest):
    if "feature" in d:
        return Internal(d["id"], d["feature"], d["threshold"],
                        _node_from_dict(d["left"], forest), _node_from_dict(d["right"], forest))
    leaf = Leaf(d["id"], forest.n_features, forest.params.buffer_capacity, d["weights"], d["bias"])
    leaf.visits = d["count"]
    leaf.var = d["var"]
    leaf.n_seen = d.get("n_seen", 0)
    if "obs_sum" in d:
        leaf.obs_sum = np.array(d["obs_sum"], dtype=np.float64)
    if "mdp" in d:
        leaf.mdp = MdpStats.from_dict(d["mdp"])
    for r in d.get("buffer", []):
        leaf.buffer.append(Transition.from_dict(r))
    return leaf


def _tree_to_dict(tree, include_buffers):
    return {
        "action": tree.action,
        "next_id": tree.next_id,
        "q_stats": [tree.q_n, tree.q_mean, tree.q_m2],
        "splits": tree.splits,
        "root": _node_to_dict(tree.root, include_buffers),
    }


def _tree_from_dict(d, forest):
    tree = LmutTree(forest.n_features, d["action"], forest.params)
    tree.next_id = d["next_id"]
    tree.q_n, tree.q_mean, tree.q_m2 = d["q_stats"]
    tree.splits = d["splits"]
    tree.root = _node_from_dict(d["root"], forest)
    return tree


# --- module-level operations ------------------------------------------------------------------


def route(tree: LmutTree, obs) -> Leaf:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (tree.n_features,):
        raise ValueError(f"observation shape {obs.shape}, expected ({tree.n_features},)")
    return tree.route(obs)


def predict(forest: LmutForest, obs, action: int) -> float:
    return forest.predict(obs, action)


def predict_q_vector(forest: LmutForest, obs) -> np.ndarray:
    return forest.q_vector(obs)


# --- value iteration --------------------------------------------------------------------------


def solve_leaf_mdp(P, reward, value_index, gamma, tol=1e-6, max_sweeps=1000, q0=None):
    """Synchronous value iteration ``Q <- reward + gamma * P @ max(Q[value_index], axis=1)``.

    ``P`` maps rows to successor states (sparse, rows sum to one or zero),
    ``reward`` is the expected immediate reward per row and ``value_index``
    lists, for each successor state, the rows whose maximum is its value.
    Returns (Q, sweeps, last_change).
    """
    q = np.zeros(P.shape[0]) if q0 is None else np.array(q0, dtype=np.float64)
    change = math.inf
    sweeps = 0
    while sweeps < max_sweeps:
        v = q[value_index].max(axis=1) if value_index.size else np.zeros(0)
        new = reward + gamma * (P @ v)
        change = float(np.max(np.abs(new - q))) if new.size else 0.0
        q = new
        sweeps += 1
        if change < tol:
            break
    return q, sweeps, change


def forest_mdp(forest: LmutForest):
    """Assemble the leaf MDP of a forest.

    States are (action, leaf id) pairs.  The value of a successor leaf of
    tree ``a`` takes the max over actions ``a'`` of the leaf in tree ``a'``
    containing the successor's data centroid.
    """
    keys = []
    for tree in forest.trees:
        for leaf in tree.leaves():
            keys.append((tree.action, leaf.id))
    index = {k: i for i, k in enumerate(keys)}
    n = len(keys)
    value_index = np.zeros((n, forest.n_actions), dtype=np.int64)
    leaf_of = {}
    for tree in forest.trees:
        for leaf in tree.leaves():
            leaf_of[(tree.action, leaf.id)] = leaf
    for (a, lid), i in index.items():
        c = leaf_of[(a, lid)].centroid
        for a2 in range(forest.n_actions):
            if a2 == a or c is None:
                value_index[i, a2] = i
            else:
                value_index[i, a2] = index[(a2, forest.trees[a2].route(c).id)]
    rows, cols, vals = [], [], []
    reward = np.zeros(n)
    any_stats = False
    for (a, lid), i in index.items():
        stats = leaf_of[(a, lid)].mdp
        if stats is None or stats.count == 0:
            continue
        any_stats = True
        for succ, p, r in stats.normalized():
            reward[i] += p * r
            if succ == TERMINAL:
                continue
            rows.append(i)
            cols.append(index[(a, succ)])
            vals.append(p)
    if not any_stats:
        raise UsageError("forest has no MDP statistics; learn with flag_mdp=True")
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return keys, P, reward, value_index


def mdp_value_iteration(forest: LmutForest, gamma=None, tol=1e-6, max_sweeps=1000, order=None):
    """Solve the forest's leaf MDP; returns {(action, leaf_id): Q}.

    ``order`` optionally permutes the state indexing (results are independent
    of it because sweeps are synchronous).
    """
    gamma = forest.params.gamma if gamma is None else gamma
    keys, P, reward, value_index = forest_mdp(forest)
    if order is not None:
        order = np.asarray(order)
        inv = np.empty_like(order)
        inv[order] = np.arange(order.shape[0])
        P = P[order][:, order]
        reward = reward[order]
        value_index = inv[value_index[order]]
        keys = [keys[i] for i in order]
    q, _, _ = solve_leaf_mdp(P, reward, value_index, gamma, tol, max_sweeps)
    return {k: float(v) for k, v in zip(keys, q)}
