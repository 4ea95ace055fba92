"""Tree-based interpretation: feature influence, rule cells and super-pixels."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .core import Cell, UsageError, argmax_lowest
from .envs import EnvSpec, pixel_index


def split_influence(split: dict) -> float:
    """Influence contribution of one audited split.

    The variance reduction of the split is scaled by 1 + w_f^2 / sum(w^2),
    using the parent's weights when it was split (factor 1 if they are all 0).
    """
    w = np.asarray(split["weights"], dtype=np.float64)
    norm = float(w @ w)
    factor = 1.0 + (w[split["feature"]] ** 2 / norm if norm > 0 else 0.0)
    counts = np.asarray(split["counts"], dtype=np.float64)
    reduction = split["var"] - float(counts @ np.asarray(split["child_vars"]) / counts.sum())
    return factor * reduction


@dataclass
class InfluenceTable:
    influence: np.ndarray  # one value per feature
    nodes: list  # (action, node id, feature, contribution)
    feature_names: tuple = ()

    def name(self, f):
        return self.feature_names[f] if f < len(self.feature_names) else f"f{f}"

    def ranking(self):
        """Feature indices by decreasing influence (ties by index)."""
        return sorted(range(len(self.influence)), key=lambda f: (-self.influence[f], f))

    def rows(self, nonzero_only=False):
        return [(self.name(f), float(self.influence[f])) for f in self.ranking()
                if not nonzero_only or self.influence[f] > 0]

    def write_csv(self, path, manifest_line=None):
        with open(path, "w", newline="") as fh:
            if manifest_line:
                fh.write(f"# {manifest_line}\n")
            w = csv.writer(fh)
            w.writerow(["feature", "influence"])
            for name, v in self.rows():
                w.writerow([name, repr(v)])


def feature_influence(forest, feature_names=()) -> InfluenceTable:
    """Sum of split contributions per feature over every tree of the forest."""
    inf = np.zeros(forest.n_features)
    nodes = []
    for tree in forest.trees:
        for s in tree.splits:
            c = split_influence(s)
            inf[s["feature"]] += c
            nodes.append((tree.action, s["node"], s["feature"], c))
    return InfluenceTable(inf, nodes, tuple(feature_names))


# --- rules ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    cell: Cell
    q: tuple
    visits: int
    action: int


@dataclass
class RuleReport:
    rules: list
    feature_names: tuple = ()
    action_names: tuple = ()

    def _action(self, a):
        return self.action_names[a] if a < len(self.action_names) else f"a{a}"

    def to_text(self) -> str:
        blocks = []
        for i, r in enumerate(self.rules, 1):
            qs = ", ".join(f"{self._action(a)}={v:.4f}" for a, v in enumerate(r.q))
            blocks.append(
                f"rule {i} (visits {r.visits})\n"
                f"  if {r.cell.describe(self.feature_names)}\n"
                f"  Q: {qs}\n"
                f"  then {self._action(r.action)}"
            )
        return "\n\n".join(blocks) + ("\n" if blocks else "")

    def to_json(self) -> str:
        return json.dumps([
            {"cell": r.cell.to_dict(), "q": list(r.q), "visits": r.visits, "action": r.action}
            for r in self.rules
        ], indent=1)


def extract_rules(forest, top_k: int = 10, feature_names=(), action_names=()) -> RuleReport:
    """The ``top_k`` most visited cells of the first action's tree.

    Each cell gets the full Q-vector of the forest evaluated at the centroid
    of the observations its leaf has seen; unvisited leaves are skipped.
    """
    if top_k < 0:
        raise ValueError("top_k must be non-negative")
    anchor = forest.trees[0]
    found = [(leaf, cell) for leaf, cell in anchor.leaf_cells() if leaf.n_seen > 0]
    found.sort(key=lambda lc: -lc[0].n_seen)  # stable: ties keep left-to-right order
    rules = []
    for leaf, cell in found[:top_k]:
        q = forest.q_vector(leaf.centroid)
        rules.append(Rule(cell, tuple(float(v) for v in q), int(leaf.n_seen), argmax_lowest(q)))
    return RuleReport(rules, tuple(feature_names), tuple(action_names))


# --- super-pixels --------------------------------------------------------------------------


def superpixels(forest, obs, spec: EnvSpec, table: InfluenceTable | None = None, threshold=None):
    """Pixels split on along the observation's root-to-leaf paths whose influence
    exceeds ``threshold`` (default: mean of the positive influences).

    Returns a sorted list of (frame, row, col).
    """
    if spec.pixel_shape is None:
        raise UsageError(f"{spec.name} has no pixel observations")
    table = table or feature_influence(forest)
    inf = table.influence
    if threshold is None:
        pos = inf[inf > 0]
        if pos.size == 0:
            return []
        threshold = float(pos.mean())
    obs = np.asarray(obs, dtype=np.float64)
    feats = {node.feature for tree in forest.trees for node in tree.path(obs)}
    return sorted(pixel_index(spec, f) for f in feats if inf[f] > threshold)


def pixel_masks(pixels, spec: EnvSpec) -> np.ndarray:
    """Binary (frames, rows, cols) mask with 255 at highlighted pixels."""
    mask = np.zeros(spec.pixel_shape, dtype=np.uint8)
    for p in pixels:
        mask[p] = 255
    return mask


def write_pgm(path, image):
    """Write a 2-D uint8 array as a binary PGM."""
    image = np.asarray(image, dtype=np.uint8)
    rows, cols = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode())
        fh.write(image.tobytes())


def frame_share(pixels, frame=0) -> float:
    """Fraction of highlighted pixels lying on ``frame``."""
    if not pixels:
        return 0.0
    return sum(p[0] == frame for p in pixels) / len(pixels)
