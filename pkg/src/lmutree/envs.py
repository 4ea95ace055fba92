"""Deterministic control environments: Mountain Car, Cart Pole and MiniBird.

All environments cap episodes at 200 steps.  MiniBird is a 16x16 binary-pixel
flappy-bird clone whose observation stacks the four most recent frames, most
recent first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import UsageError

EPISODE_CAP = 200


@dataclass(frozen=True)
class EnvSpec:
    name: str
    feature_count: int
    action_count: int
    episode_cap: int = EPISODE_CAP
    feature_names: tuple = ()
    action_names: tuple = ()
    return_bounds: tuple = (-math.inf, math.inf)
    pixel_shape: tuple | None = None  # (frames, rows, cols) for image observations


@dataclass(frozen=True)
class StepResult:
    next_obs: np.ndarray
    reward: float
    done: bool
    truncated: bool = False  # done only because the step cap was hit


class Env:
    spec: EnvSpec

    def __init__(self):
        self._t = 0
        self._done = True

    def reset(self, seed: int) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        self._t = 0
        self._done = False
        self._reset()
        return self._obs()

    def step(self, action: int) -> StepResult:
        if self._done:
            raise UsageError("step() called on a finished episode; call reset() first")
        action = int(action)
        if not 0 <= action < self.spec.action_count:
            raise ValueError(f"invalid action {action}")
        reward, terminal = self._step(action)
        self._t += 1
        done = terminal or self._t >= self.spec.episode_cap
        self._done = done
        obs = self._obs()
        obs.setflags(write=False)
        return StepResult(obs, float(reward), bool(done), bool(done and not terminal))

    @property
    def done(self) -> bool:
        return self._done

    def _reset(self):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError

    def _obs(self) -> np.ndarray:
        raise NotImplementedError


class MountainCar(Env):
    spec = EnvSpec(
        "mountain-car", 2, 3,
        feature_names=("position", "velocity"),
        action_names=("move_left", "no_push", "move_right"),
        return_bounds=(-200.0, -1.0),
    )
    min_position, max_position = -1.2, 0.6
    max_speed = 0.07
    goal_position = 0.5

    def _reset(self):
        self.position = float(self.rng.uniform(-0.6, -0.4))
        self.velocity = 0.0

    def set_state(self, position, velocity):
        self.position, self.velocity = float(position), float(velocity)

    def _step(self, action):
        v = self.velocity + 0.001 * (action - 1) - 0.0025 * math.cos(3 * self.position)
        v = min(max(v, -self.max_speed), self.max_speed)
        x = min(max(self.position + v, self.min_position), self.max_position)
        self.position, self.velocity = x, v
        return -1.0, x >= self.goal_position

    def _obs(self):
        return np.array([self.position, self.velocity])


class CartPole(Env):
    spec = EnvSpec(
        "cart-pole", 4, 2,
        feature_names=("cart_position", "cart_velocity", "pole_angle", "pole_velocity"),
        action_names=("push_left", "push_right"),
        return_bounds=(1.0, 200.0),
    )
    gravity = 9.8
    cart_mass = 1.0
    pole_mass = 0.1
    half_length = 0.5
    force_mag = 10.0
    tau = 0.02
    angle_limit = 12 * 2 * math.pi / 360
    x_limit = 2.4

    def _reset(self):
        self.state = [float(v) for v in self.rng.uniform(-0.05, 0.05, size=4)]

    def _step(self, action):
        x, x_dot, theta, theta_dot = self.state
        force = self.force_mag if action == 1 else -self.force_mag
        total_mass = self.cart_mass + self.pole_mass
        pm_length = self.pole_mass * self.half_length
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + pm_length * theta_dot**2 * sin) / total_mass
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.half_length * (4.0 / 3.0 - self.pole_mass * cos**2 / total_mass)
        )
        x_acc = temp - pm_length * theta_acc * cos / total_mass
        # explicit Euler
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * x_acc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * theta_acc
        self.state = [x, x_dot, theta, theta_dot]
        failed = abs(theta) > self.angle_limit or abs(x) > self.x_limit
        return 1.0, failed

    def _obs(self):
        return np.array(self.state)


class MiniBird(Env):
    """16x16 flappy-bird: the bird sits in column 3, pipes scroll left.

    Row 0 is the top.  Gravity adds 1 to the velocity each step, a flap sets
    it to -2, then the height moves by the velocity.  Leaving the grid or
    touching a pipe cell ends the episode.
    """

    size = 16
    bird_col = 3
    gap = 4
    spacing = 8
    n_frames = 4
    spec = EnvSpec(
        "mini-bird", 4 * 16 * 16, 2,
        action_names=("idle", "flap"),
        return_bounds=(1.0, 200.0),
        pixel_shape=(4, 16, 16),
    )

    def _reset(self):
        self.height = self.size // 2 - 1
        self.velocity = 0
        # pipe: [column, gap_top]
        self.pipes = [[c, self._gap_top()] for c in range(self.size - 4, self.size + self.spacing, self.spacing)]
        frame = self._frame()
        self.frames = [frame] * self.n_frames

    def _gap_top(self):
        return int(self.rng.integers(2, self.size - self.gap - 1))

    def _step(self, action):
        self.velocity = -2 if action == 1 else self.velocity + 1
        self.height += self.velocity
        for p in self.pipes:
            p[0] -= 1
        if self.pipes[0][0] < 0:
            self.pipes.pop(0)
        if self.pipes[-1][0] <= self.size - self.spacing:
            self.pipes.append([self.pipes[-1][0] + self.spacing, self._gap_top()])
        crashed = not 0 <= self.height < self.size or self._hits_pipe()
        self.frames = [self._frame()] + self.frames[:-1]
        return 1.0, crashed

    def _hits_pipe(self):
        for col, top in self.pipes:
            if col == self.bird_col and not top <= self.height < top + self.gap:
                return True
        return False

    def _frame(self):
        f = np.zeros((self.size, self.size))
        for col, top in self.pipes:
            if 0 <= col < self.size:
                f[:, col] = 1.0
                f[top : top + self.gap, col] = 0.0
        if 0 <= self.height < self.size:
            f[self.height, self.bird_col] = 1.0
        return f

    def _obs(self):
        return np.concatenate([f.reshape(-1) for f in self.frames])


ENVIRONMENTS = {cls.spec.name: cls for cls in (MountainCar, CartPole, MiniBird)}


def make_env(name: str) -> Env:
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def env_spec(name: str) -> EnvSpec:
    return make_env(name).spec


def pixel_index(spec: EnvSpec, flat: int) -> tuple:
    """Map a flat feature index to (frame, row, col)."""
    if spec.pixel_shape is None:
        raise UsageError(f"{spec.name} has no pixel observations")
    return tuple(int(v) for v in np.unravel_index(flat, spec.pixel_shape))
