"""Mimic training data: experience datasets and active-play streams."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Transition, UsageError, argmax_lowest
from .envs import Env, make_env
from .teacher import Teacher, TeacherConfig, TrainingLog, default_config, train_teacher


@dataclass
class ExperienceDataset:
    records: list
    env_name: str
    teacher_fingerprint: str
    teacher: Teacher | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.records)

    def for_action(self, action):
        return [r for r in self.records if r.action == action]


def record_experience(env: Env | str, teacher_config: TeacherConfig | None = None, n: int = 1) -> ExperienceDataset:
    """Train a teacher while logging every visited step, then label the first ``n`` steps.

    Labels come from the finished (mature) teacher, not the one that was
    acting at the time.  Training runs past its configured episodes if fewer
    than ``n`` steps were logged.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if isinstance(env, str):
        env = make_env(env)
    cfg = teacher_config or default_config(env.spec.name)
    steps = TrainingLog()
    teacher = train_teacher(env, cfg, log_steps=steps, min_steps=n)
    records = [
        Transition(
            steps.obs[i], steps.actions[i], steps.rewards[i], steps.next_obs[i],
            teacher.q(steps.obs[i], steps.actions[i]), steps.dones[i],
        )
        for i in range(n)
    ]
    return ExperienceDataset(records, env.spec.name, teacher.fingerprint(), teacher)


def fold_bounds(n: int, k: int = 10):
    """Contiguous (start, stop) blocks partitioning range(n) into ``k`` folds."""
    if k < 1 or n < k:
        raise ValueError(f"cannot split {n} records into {k} folds")
    edges = np.linspace(0, n, k + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def fold_split(records, fold: int, k: int = 10):
    """(train, test) where test is contiguous block ``fold`` of ``k``."""
    a, b = fold_bounds(len(records), k)[fold]
    return records[:a] + records[b:], records[a:b]


class ActiveStream:
    """Teacher-driven transition stream with an epsilon-greedy querying function.

    Epsilon decays linearly from ``epsilon_start`` to ``epsilon_end`` over the
    first ``decay_fraction`` of ``budget`` queries, then holds.  Episodes are
    reset on seeds ``seed + episode_index``.
    """

    def __init__(self, env: Env, teacher: Teacher, budget: int, batch_size: int = 32, seed: int = 0,
                 epsilon_start: float = 1.0, epsilon_end: float = 0.0, decay_fraction: float = 0.5):
        if batch_size < 1 or budget < 1:
            raise ValueError("batch_size and budget must be positive")
        self.env = env
        self.teacher = teacher
        self.budget = int(budget)
        self.batch_size = int(batch_size)
        self.seed = int(seed)
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.decay_fraction = decay_fraction
        self.rng = np.random.default_rng(seed)
        self.queries = 0
        self.episodes = 0
        self.closed = False
        self._obs = env.reset(self.seed)

    def epsilon(self, query: int) -> float:
        span = self.decay_fraction * self.budget
        if span <= 0:
            return self.epsilon_end
        frac = min(1.0, query / span)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    def _one(self) -> Transition:
        obs = self._obs
        q = self.teacher.q_vector(obs)
        eps = self.epsilon(self.queries)
        if eps > 0 and self.rng.random() < eps:
            action = int(self.rng.integers(len(q)))
        else:
            action = argmax_lowest(q)
        res = self.env.step(action)
        rec = Transition(obs, action, res.reward, res.next_obs, float(q[action]), res.done)
        self.queries += 1
        if res.done:
            self.episodes += 1
            self._obs = self.env.reset(self.seed + self.episodes)
        else:
            self._obs = res.next_obs
        return rec

    def next_batch(self, size: int | None = None) -> list:
        if self.closed:
            raise UsageError("stream is closed")
        return [self._one() for _ in range(size or self.batch_size)]

    def take(self, n: int) -> list:
        """The next ``n`` transitions as one list."""
        return self.next_batch(n)

    def batches(self, total: int | None = None):
        """Yield minibatches until ``total`` (default: budget) transitions were emitted.

        The last batch is short when ``total`` is not a multiple of the batch size.
        """
        remaining = self.budget if total is None else int(total)
        while remaining > 0:
            size = min(self.batch_size, remaining)
            remaining -= size
            yield self.next_batch(size)

    def close(self):
        self.closed = True


def stream_next_batch(stream: ActiveStream) -> list:
    return stream.next_batch()


def active_play(env: Env | str, teacher: Teacher, n: int, batch_size: int = 32, seed: int = 0, **kw) -> list:
    """Collect ``n`` active-play transitions with the default epsilon schedule."""
    if isinstance(env, str):
        env = make_env(env)
    stream = ActiveStream(env, teacher, n, batch_size, seed, **kw)
    out = stream.take(n)
    stream.close()
    return out
