"""Baseline learners: batch CART regression trees and Continuous U-Trees (CUT)."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, fields

import numpy as np
import scipy.sparse as sp

from .core import Transition, argmax_lowest
from .envs import Env, make_env
from .lmut import (
    TERMINAL,
    Internal,
    LmutTree,
    MdpStats,
    get_distinctions,
    score_distinctions,
    solve_leaf_mdp,
)

# --- CART ----------------------------------------------------------------------------


class CartLeaf:
    is_leaf = True

    def __init__(self, node_id, mean, count):
        self.id = node_id
        self.mean = float(mean)
        self.count = int(count)


def _best_cart_split(X, y, min_leaf):
    """Best (feature, threshold, score) by exact variance reduction, or None.

    Scans every midpoint with prefix sums, then re-scores the near-best
    candidates on their masks so ties break to the lowest feature and
    threshold regardless of summation order.
    """
    n, d = X.shape
    yc = y - y.mean()
    total = yc.sum()
    best = []
    top = -math.inf
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cs = np.cumsum(yc[order])
        nl = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        sl = cs[:-1][valid]
        nlv = nl[valid].astype(np.float64)
        sr = total - sl
        scores = (sl * sl / nlv + sr * sr / (n - nlv) - total * total / n) / n
        lo, hi = xs[:-1][valid], xs[1:][valid]
        mids = (lo + hi) / 2
        mids = np.where(mids > lo, mids, hi)
        fmax = scores.max()
        if fmax >= top - 1e-9 * abs(top) - 1e-300:
            near = np.flatnonzero(scores >= fmax - 1e-9 * abs(fmax) - 1e-300)
            best.extend((f, float(mids[i]), float(scores[i])) for i in near)
            top = max(top, fmax)
    if not best:
        return None
    cut = top - 1e-9 * abs(top) - 1e-300
    cands = [(f, t) for f, t, s in best if s >= cut]
    exact = score_distinctions(X, y, cands)
    i = int(np.argmax(exact))
    if not exact[i] > 0:
        return None
    return cands[i][0], cands[i][1], float(exact[i])


class CartTree:
    """Regression tree predicting the mean target of each leaf."""

    def __init__(self, n_features, min_leaf=8, max_depth=30):
        self.n_features = n_features
        self.min_leaf = int(min_leaf)
        self.max_depth = int(max_depth)
        self.root = None

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        next_id = [0]

        def new_id():
            next_id[0] += 1
            return next_id[0] - 1

        def build(idx, depth):
            node_id = new_id()
            ys = y[idx]
            if len(idx) < 2 * self.min_leaf or depth >= self.max_depth or np.all(ys == ys[0]):
                return CartLeaf(node_id, ys.mean(), len(idx))
            found = _best_cart_split(X[idx], ys, self.min_leaf)
            if found is None:
                return CartLeaf(node_id, ys.mean(), len(idx))
            f, t, _ = found
            mask = X[idx, f] < t
            left = build(idx[mask], depth + 1)
            right = build(idx[~mask], depth + 1)
            return Internal(node_id, f, t, left, right)

        if len(y) == 0:
            raise ValueError("cannot fit a tree on no samples")
        self.root = build(np.arange(len(y)), 0)
        return self

    def route(self, obs):
        node = self.root
        while not node.is_leaf:
            node = node.left if obs[node.feature] < node.threshold else node.right
        return node

    def predict(self, obs) -> float:
        return self.route(obs).mean

    def leaves(self):
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                out.append(n)
            else:
                stack.extend((n.right, n.left))
        return out

    def to_dict(self):
        def enc(n):
            if n.is_leaf:
                return {"id": n.id, "mean": n.mean, "count": n.count}
            return {"id": n.id, "feature": n.feature, "threshold": n.threshold,
                    "left": enc(n.left), "right": enc(n.right)}

        return {"min_leaf": self.min_leaf, "max_depth": self.max_depth, "root": enc(self.root)}

    @classmethod
    def from_dict(cls, d, n_features):
        def dec(n):
            if "feature" not in n:
                return CartLeaf(n["id"], n["mean"], n["count"])
            return Internal(n["id"], n["feature"], n["threshold"], dec(n["left"]), dec(n["right"]))

        t = cls(n_features, d["min_leaf"], d["max_depth"])
        t.root = dec(d["root"])
        return t


def cart_fit(records, action: int, n_features: int | None = None, min_leaf=8, max_depth=30) -> CartTree:
    """Fit a CART tree on the Q-hat labels of ``action``'s records (in dataset order)."""
    recs = [r for r in records if r.action == action]
    if n_features is None:
        if not recs:
            raise ValueError("no records for action and no feature count given")
        n_features = recs[0].obs.shape[0]
    tree = CartTree(n_features, min_leaf, max_depth)
    if not recs:
        tree.root = CartLeaf(0, 0.0, 0)
        return tree
    X = np.stack([r.obs for r in recs])
    y = np.array([r.q_hat for r in recs])
    return tree.fit(X, y)


class CartForest:
    """One CART tree per action."""

    def __init__(self, trees):
        self.trees = list(trees)
        self.n_actions = len(self.trees)
        self.n_features = self.trees[0].n_features

    @classmethod
    def fit(cls, records, n_features, n_actions, min_leaf=8, max_depth=30):
        return cls(cart_fit(records, a, n_features, min_leaf, max_depth) for a in range(n_actions))

    def predict(self, obs, action):
        return self.trees[action].predict(np.asarray(obs, dtype=np.float64))

    def q_vector(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        return np.array([t.predict(obs) for t in self.trees])

    def greedy(self, obs):
        return argmax_lowest(self.q_vector(obs))

    def leaf_count(self):
        return sum(len(t.leaves()) for t in self.trees)

    def to_dict(self):
        return {"format": "lmutree-cart", "n_features": self.n_features, "n_actions": self.n_actions,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls(CartTree.from_dict(t, d["n_features"]) for t in d["trees"])


# --- Continuous U-Tree -----------------------------------------------------------------------


@dataclass
class CutParams:
    gamma: float = 0.99
    buffer_capacity: int = 512
    min_child: int = 16
    candidates: int = 20
    min_split_ratio: float = 0.01
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    decay_fraction: float = 0.5
    tol: float = 1e-6
    max_sweeps: int = 1000
    max_leaves: int = 10**9

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class CutLeaf:
    is_leaf = True

    def __init__(self, node_id, n_actions, capacity):
        self.id = node_id
        self.buffer = deque(maxlen=capacity)
        self.mdp = [MdpStats() for _ in range(n_actions)]
        self.q = np.zeros(n_actions)
        self.fresh = False

    @property
    def visits(self):
        return sum(m.count for m in self.mdp)


class CutTree(LmutTree):
    """A single tree over observations whose leaves are the states of a learned MDP.

    Leaves keep per-action transition statistics and Q estimates; the Q table
    is the value-iteration fixed point of the leaf MDP.
    """

    def __init__(self, n_features, n_actions, params: CutParams | None = None):
        self.n_features = n_features
        self.n_actions = n_actions
        self.params = params or CutParams()
        self.next_id = 1
        self.root = CutLeaf(0, n_actions, self.params.buffer_capacity)
        self.splits = []
        self.sweeps = 0
        self.q_n, self.q_mean, self.q_m2 = 0, 0.0, 0.0

    # prediction
    def q_vector(self, obs):
        return self.route(np.asarray(obs, dtype=np.float64)).q.copy()

    def predict(self, obs, action):
        return float(self.q_vector(obs)[action])

    def greedy(self, obs):
        return argmax_lowest(self.q_vector(obs))

    def leaf_count(self):
        return len(self.leaves())

    # learning
    def gather(self, batch):
        for rec in batch:
            leaf = self.route(rec.obs)
            leaf.buffer.append(rec)
            self._update(leaf, rec)
            leaf.fresh = True

    def _update(self, leaf, rec):
        succ = TERMINAL if rec.done else self.route(rec.next_obs).id
        leaf.mdp[rec.action].update(succ, rec.reward)

    def rebuild_mdp(self):
        leaves = self.leaves()
        for leaf in leaves:
            leaf.mdp = [MdpStats() for _ in range(self.n_actions)]
        for leaf in leaves:
            for rec in leaf.buffer:
                self._update(leaf, rec)

    def solve(self):
        """Refresh every leaf's Q estimates by value iteration (warm-started)."""
        leaves = self.leaves()
        index = {leaf.id: i for i, leaf in enumerate(leaves)}
        A = self.n_actions
        n = len(leaves) * A
        rows, cols, vals = [], [], []
        reward = np.zeros(n)
        for i, leaf in enumerate(leaves):
            for a, stats in enumerate(leaf.mdp):
                if stats.count == 0:
                    continue
                r = i * A + a
                for succ, p, rw in stats.normalized():
                    reward[r] += p * rw
                    if succ != TERMINAL:
                        rows.append(r)
                        cols.append(index[succ])
                        vals.append(p)
        P = sp.csr_matrix((vals, (rows, cols)), shape=(n, len(leaves)))
        value_index = np.arange(n).reshape(len(leaves), A)
        q0 = np.concatenate([leaf.q for leaf in leaves])
        q, sweeps, _ = solve_leaf_mdp(P, reward, value_index, self.params.gamma, self.params.tol,
                                      self.params.max_sweeps, q0=q0)
        self.sweeps = sweeps
        for i, leaf in enumerate(leaves):
            leaf.q = q[i * A:(i + 1) * A].copy()
        return q

    def sample_values(self, leaf):
        """One-step backed-up values r + gamma * V(s') for the buffered transitions."""
        out = np.empty(len(leaf.buffer))
        for i, rec in enumerate(leaf.buffer):
            v = 0.0 if rec.done else self.route(rec.next_obs).q.max()
            out[i] = rec.reward + self.params.gamma * v
        return out

    def split_score(self, X, actions, values, distinctions):
        """Count-weighted sum over actions of the variance reduction of backed-up values."""
        total = np.zeros(len(distinctions))
        n = len(values)
        for a in range(self.n_actions):
            sel = actions == a
            if sel.sum() < 2:
                continue
            s = score_distinctions(X[sel], values[sel], distinctions)
            s[~np.isfinite(s)] = 0.0
            total += sel.sum() / n * s
        return total

    def split_phase(self):
        p = self.params
        split_any = False
        for leaf in self.leaves():
            if not leaf.fresh:
                continue
            leaf.fresh = False
            if len(self.leaves()) >= p.max_leaves or len(leaf.buffer) < 2 * p.min_child:
                continue
            X = np.stack([r.obs for r in leaf.buffer])
            actions = np.array([r.action for r in leaf.buffer])
            values = self.sample_values(leaf)
            for v in values:
                self.observe_q(v)
            cands = get_distinctions(X, p.min_child, p.candidates)
            if not cands:
                continue
            scores = self.split_score(X, actions, values, cands)
            i = int(np.argmax(scores))
            if scores[i] > 0 and scores[i] >= p.min_split_ratio * self.root_var:
                f, t = cands[i]
                self._split(leaf, f, t, X, values, float(scores[i]))
                split_any = True
        if split_any:
            self.rebuild_mdp()
        return split_any

    def _split(self, leaf, f, t, X, values, score):
        mask = X[:, f] < t
        kids = []
        for side in (mask, ~mask):
            child = CutLeaf(self._new_id(), self.n_actions, self.params.buffer_capacity)
            for i in np.flatnonzero(side):
                child.buffer.append(leaf.buffer[i])
            child.q = leaf.q.copy()
            kids.append(child)
        self.splits.append({
            "node": leaf.id, "feature": int(f), "threshold": float(t), "score": score,
            "var": float(np.var(values)), "counts": [int(mask.sum()), int((~mask).sum())],
            "child_vars": [float(np.var(values[mask])), float(np.var(values[~mask]))],
            "children": [kids[0].id, kids[1].id],
        })
        self.replace(leaf, Internal(leaf.id, f, t, kids[0], kids[1]))

    def learn(self, batch):
        self.gather(batch)
        self.split_phase()
        self.solve()

    # serialization
    def to_dict(self):
        def enc(n):
            if not n.is_leaf:
                return {"id": n.id, "feature": n.feature, "threshold": n.threshold,
                        "left": enc(n.left), "right": enc(n.right)}
            return {"id": n.id, "q": n.q.tolist(), "count": n.visits, "mdp": [m.to_dict() for m in n.mdp]}

        return {"format": "lmutree-cut", "n_features": self.n_features, "n_actions": self.n_actions,
                "params": asdict(self.params), "next_id": self.next_id, "splits": self.splits,
                "root": enc(self.root)}

    @classmethod
    def from_dict(cls, d):
        tree = cls(d["n_features"], d["n_actions"], CutParams.from_dict(d["params"]))

        def dec(n):
            if "feature" in n:
                return Internal(n["id"], n["feature"], n["threshold"], dec(n["left"]), dec(n["right"]))
            leaf = CutLeaf(n["id"], tree.n_actions, tree.params.buffer_capacity)
            leaf.q = np.array(n["q"], dtype=np.float64)
            leaf.mdp = [MdpStats.from_dict(m) for m in n["mdp"]]
            return leaf

        tree.root = dec(d["root"])
        tree.next_id = d["next_id"]
        tree.splits = d["splits"]
        return tree


def cut_learn(env: Env | str, budget: int, params: CutParams | None = None, seed: int = 0,
              batch_size: int = 32, transitions=None) -> CutTree:
    """Learn a CUT directly by reinforcement learning.

    The agent acts epsilon-greedily on its own Q estimates for ``budget``
    steps.  When ``transitions`` is given those are consumed instead and the
    environment is only used for its spec.
    """
    if isinstance(env, str):
        env = make_env(env)
    params = params or CutParams()
    spec = env.spec
    tree = CutTree(spec.feature_count, spec.action_count, params)
    if transitions is not None:
        recs = list(transitions)
        for i in range(0, len(recs), batch_size):
            tree.learn(recs[i:i + batch_size])
        return tree
    rng = np.random.default_rng(seed)
    episode = 0
    obs = env.reset(seed)
    batch = []
    span = params.decay_fraction * budget
    for step in range(budget):
        frac = min(1.0, step / span) if span > 0 else 1.0
        eps = params.epsilon_start + frac * (params.epsilon_end - params.epsilon_start)
        if rng.random() < eps:
            action = int(rng.integers(spec.action_count))
        else:
            action = tree.greedy(obs)
        res = env.step(action)
        terminal = res.done and not res.truncated
        batch.append(Transition(obs, action, res.reward, res.next_obs, 0.0, terminal))
        if res.done:
            episode += 1
            obs = env.reset(seed + episode)
        else:
            obs = res.next_obs
        if len(batch) == batch_size:
            tree.learn(batch)
            batch = []
    if batch:
        tree.learn(batch)
    return tree


def load_model(d):
    """Rebuild any model (LMUT forest, CART forest or CUT) from its JSON dict."""
    from .lmut import LmutForest

    if isinstance(d, str):
        d = json.loads(d)
    fmt = d.get("format")
    if fmt == "lmutree-forest":
        return LmutForest.from_dict(d)
    if fmt == "lmutree-cart":
        return CartForest.from_dict(d)
    if fmt == "lmutree-cut":
        return CutTree.from_dict(d)
    raise ValueError(f"unknown model format {fmt!r}")
