"""Fidelity metrics, game-play evaluation and prequential learning curves."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from .core import argmax_lowest
from .envs import Env, make_env


@dataclass(frozen=True)
class FidelityReport:
    mae: float
    rmse: float
    rae: float | None  # None when the targets are constant
    rse: float | None
    leaf_count: int
    n: int

    def to_dict(self):
        return asdict(self)


def fidelity(predictions, targets, leaf_count: int = 0) -> FidelityReport:
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("predictions and targets must be equal-length non-empty vectors")
    e = p - y
    abs_sum = float(np.abs(e).sum())
    sq_sum = float((e * e).sum())
    dev = y - y.mean()
    dev_abs = float(np.abs(dev).sum())
    dev_sq = float((dev * dev).sum())
    n = y.size
    return FidelityReport(
        mae=abs_sum / n,
        rmse=math.sqrt(sq_sum / n),
        rae=abs_sum / dev_abs if dev_abs > 0 else None,
        rse=sq_sum / dev_sq if dev_sq > 0 else None,
        leaf_count=int(leaf_count),
        n=n,
    )


def model_fidelity(model, records) -> FidelityReport:
    """Fidelity of ``model.predict(obs, action)`` against the records' Q-hat labels."""
    preds = [model.predict(r.obs, r.action) for r in records]
    leaves = model.leaf_count() if hasattr(model, "leaf_count") else 0
    return fidelity(preds, [r.q_hat for r in records], leaves)


@dataclass(frozen=True)
class PlayReport:
    arpe: float
    returns: tuple
    episodes: int
    seed: int

    def to_dict(self):
        d = asdict(self)
        d["returns"] = list(self.returns)
        return d


def play_eval(policy, env: Env | str, episodes: int = 100, seed: int = 0) -> PlayReport:
    """Average return of greedy play on ``policy.q_vector``; episode i uses seed ``seed + i``."""
    if isinstance(env, str):
        env = make_env(env)
    returns = []
    for i in range(episodes):
        obs = env.reset(seed + i)
        total = 0.0
        while True:
            res = env.step(argmax_lowest(policy.q_vector(obs)))
            total += res.reward
            obs = res.next_obs
            if res.done:
                break
        returns.append(total)
    return PlayReport(float(np.mean(returns)), tuple(returns), episodes, seed)


@dataclass(frozen=True)
class CurvePoint:
    batch_index: int
    transitions: int  # transitions absorbed by the model when it was tested
    rae: float | None
    rse: float | None


def consecutive_test(learner, batches, eval_window: int = 1000, budget: int = 30000):
    """Prequential (test-then-train) learning curve.

    The first batch only trains.  Every later batch is predicted by the
    current model before it is absorbed, and a point is emitted with RAE and
    RSE over the last ``eval_window`` tested transitions.  Stops once
    ``budget`` transitions were absorbed, giving ceil(budget / B) points.
    """
    preds = deque(maxlen=eval_window)
    ys = deque(maxlen=eval_window)
    curve = []
    absorbed = 0
    it = iter(batches)
    first = next(it, None)
    if first is None:
        return curve
    learner.learn(first)
    absorbed += len(first)
    for batch in it:
        for r in batch:
            preds.append(learner.predict(r.obs, r.action))
            ys.append(r.q_hat)
        rep = fidelity(np.array(preds), np.array(ys))
        curve.append(CurvePoint(len(curve) + 1, absorbed, rep.rae, rep.rse))
        if absorbed >= budget:
            break
        learner.learn(batch)
        absorbed += len(batch)
    return curve


def point_at(curve, transitions: int) -> CurvePoint:
    """First curve point whose model had absorbed at least ``transitions``."""
    for p in curve:
        if p.transitions >= transitions:
            return p
    return curve[-1]


def write_curve_csv(path, curve, manifest_line: str | None = None):
    with open(path, "w", newline="") as fh:
        if manifest_line:
            fh.write(f"# {manifest_line}\n")
        w = csv.writer(fh)
        w.writerow(["batch_index", "transitions", "rae", "rse"])
        for p in curve:
            w.writerow([p.batch_index, p.transitions, _fmt(p.rae), _fmt(p.rse)])


def _fmt(v):
    return "NA" if v is None else repr(float(v))


def fidelity_table(rows) -> str:
    """Aligned text table from (setting, method, FidelityReport) rows."""
    header = ("Setting", "Method", "MAE", "RMSE", "RAE", "RSE", "Leaves")
    body = [
        (s, m, f"{r.mae:.3f}", f"{r.rmse:.3f}",
         "n/a" if r.rae is None else f"{r.rae:.3f}",
         "n/a" if r.rse is None else f"{r.rse:.3f}", str(r.leaf_count))
        for s, m, r in rows
    ]
    return _table(header, body)


def play_table(rows) -> str:
    """Aligned text table from (group, model, PlayReport) rows."""
    header = ("Group", "Model", "ARPE", "Episodes")
    body = [(g, m, f"{r.arpe:.2f}", str(r.episodes)) for g, m, r in rows]
    return _table(header, body)


def _table(header, body):
    widths = [max(len(str(row[i])) for row in [header, *body]) for i in range(len(header))]
    line = "+".join("-" * (w + 2) for w in widths)
    out = [line, " | ".join(h.ljust(w) for h, w in zip(header, widths)), line]
    for row in body:
        out.append(" | ".join(str(c).rjust(w) if i > 1 else str(c).ljust(w)
                              for i, (c, w) in enumerate(zip(row, widths))))
    out.append(line)
    return "\n".join(out)
