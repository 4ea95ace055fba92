"""Shared types: observations, transitions, partition cells and NDJSON streams."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np


class LmutError(Exception):
    """Base class for package errors."""


class UsageError(LmutError):
    """An operation was called in a state that does not allow it."""


class ConfigError(LmutError):
    """Invalid or inconsistent configuration."""


class TrainingFailure(LmutError):
    """A teacher did not reach its performance threshold."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class DivergedFitError(LmutError):
    """SGD produced non-finite weights (step size too large)."""


def as_observation(values, length=None) -> np.ndarray:
    """Validate and copy ``values`` into a read-only float64 vector."""
    obs = np.array(values, dtype=np.float64).reshape(-1)
    if length is not None and obs.shape[0] != length:
        raise ValueError(f"observation has {obs.shape[0]} features, expected {length}")
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains NaN or Inf")
    obs.setflags(write=False)
    return obs


@dataclass(frozen=True, eq=False)
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    q_hat: float
    done: bool

    def __post_init__(self):
        obs = as_observation(self.obs)
        nxt = as_observation(self.next_obs, obs.shape[0])
        if not math.isfinite(self.q_hat):
            raise ValueError("q_hat must be finite")
        if int(self.action) < 0:
            raise ValueError("action must be non-negative")
        object.__setattr__(self, "obs", obs)
        object.__setattr__(self, "next_obs", nxt)
        object.__setattr__(self, "action", int(self.action))
        object.__setattr__(self, "reward", float(self.reward))
        object.__setattr__(self, "q_hat", float(self.q_hat))
        object.__setattr__(self, "done", bool(self.done))

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "obs": self.obs.tolist(),
            "action": self.action,
            "reward": self.reward,
            "next_obs": self.next_obs.tolist(),
            "q_hat": self.q_hat,
            "done": self.done,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transition":
        return cls(d["obs"], d["action"], d["reward"], d["next_obs"], d["q_hat"], d["done"])


def argmax_lowest(values) -> int:
    """Greedy action; ties go to the lowest index."""
    values = np.asarray(values, dtype=np.float64)
    return int(np.argmax(values))


# --- NDJSON -----------------------------------------------------------------

MANIFEST_KEY = "manifest"


def write_ndjson(path, records: Iterable[Transition], manifest: dict | None = None) -> int:
    n = 0
    with open(path, "w") as fh:
        if manifest is not None:
            fh.write(json.dumps({MANIFEST_KEY: manifest}, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
            n += 1
    return n


def iter_ndjson(path) -> Iterator[Transition]:
    """Yield transitions from ``path``; a leading manifest line is skipped."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                if MANIFEST_KEY in d:
                    continue
                yield Transition.from_dict(d)
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed transition record ({exc})") from exc


def read_ndjson(path) -> list[Transition]:
    return list(iter_ndjson(path))


def read_manifest(path) -> dict | None:
    with open(path) as fh:
        first = fh.readline().strip()
    if not first:
        return None
    d = json.loads(first)
    return d.get(MANIFEST_KEY)


# --- partition cells ----------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    """Axis-aligned box of half-open intervals ``[lo, hi)``, one per feature."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("lo and hi differ in length")
        for lo, hi in zip(self.lo, self.hi):
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi})")

    @classmethod
    def full(cls, n_features: int) -> "Cell":
        return cls((-math.inf,) * n_features, (math.inf,) * n_features)

    @property
    def n_features(self) -> int:
        return len(self.lo)

    def restrict(self, feature: int, threshold: float, left: bool) -> "Cell | None":
        """Child cell of a split on ``feature`` at ``threshold``, or None if empty."""
        lo, hi = list(self.lo), list(self.hi)
        if left:
            hi[feature] = min(hi[feature], threshold)
        else:
            lo[feature] = max(lo[feature], threshold)
        if not lo[feature] < hi[feature]:
            return None
        return Cell(tuple(lo), tuple(hi))

    def constraints(self):
        """(feature, lo, hi) for every constrained feature."""
        return [
            (f, lo, hi)
            for f, (lo, hi) in enumerate(zip(self.lo, self.hi))
            if lo != -math.inf or hi != math.inf
        ]

    def describe(self, names: Sequence[str] | None = None, fmt="{:.4g}") -> str:
        parts = []
        for f, lo, hi in self.constraints():
            name = names[f] if names else f"f{f}"
            if lo == -math.inf:
                parts.append(f"{name} < {fmt.format(hi)}")
            elif hi == math.inf:
                parts.append(f"{name} >= {fmt.format(lo)}")
            else:
                parts.append(f"{fmt.format(lo)} <= {name} < {fmt.format(hi)}")
        return ", ".join(parts) if parts else "(all)"

    def to_dict(self) -> dict:
        return {"lo": [_enc(v) for v in self.lo], "hi": [_enc(v) for v in self.hi]}


def _enc(v: float):
    return v if math.isfinite(v) else ("-inf" if v < 0 else "inf")


def cell_contains(cell: Cell, obs) -> bool:
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    if obs.shape[0] != cell.n_features:
        raise ValueError(f"observation has {obs.shape[0]} features, cell has {cell.n_features}")
    return all(lo <= x < hi for x, lo, hi in zip(obs, cell.lo, cell.hi))


def cell_intersect(a: Cell, b: Cell) -> Cell | None:
    """Intersection of two cells; None when it is empty."""
    if a.n_features != b.n_features:
        raise ValueError("cells have different feature counts")
    lo = tuple(max(x, y) for x, y in zip(a.lo, b.lo))
    hi = tuple(min(x, y) for x, y in zip(a.hi, b.hi))
    if any(not l < h for l, h in zip(lo, hi)):
        return None
    return Cell(lo, hi)
