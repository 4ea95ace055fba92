"""Run configuration: flat ``section.key = value`` files with CLI overrides."""

from __future__ import annotations

import hashlib
import json
import os
import platform
from dataclasses import fields

from .baselines import CutParams
from .core import ConfigError
from .lmut import LmutParams
from .teacher import DEFAULT_CONFIGS, TeacherConfig

__all__ = ["RunConfig", "KEYS", "parse_config_text", "load_config"]

MODES = ("active", "experience")
MODELS = ("lmut", "cart", "cut")

# LMUT settings used for mimic runs on an environment unless overridden.
MIMIC_DEFAULTS = {
    "cart-pole": {"min_split_ratio": 0.001, "epochs": 20},
}


def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_optional_float(s):
    if s is None or str(s).strip().lower() in ("none", "null", ""):
        return None
    return float(s)


def _parse_ints(s):
    if isinstance(s, (tuple, list)):
        return tuple(int(v) for v in s)
    return tuple(int(v) for v in str(s).replace(" ", "").split(",") if v)


def _parser_for(default, optional=False):
    if optional:
        return _parse_optional_float
    if isinstance(default, bool):
        return _parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return _parse_ints
    return str


def _dataclass_keys(section, cls, optional=(), skip=()):
    out = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        out[f"{section}.{f.name}"] = (_parser_for(f.default, f.name in optional), f.default)
    return out


# key -> (parser, default)
KEYS = {
    "env.name": (str, "cart-pole"),
    "run.seed": (int, 0),
    "run.mode": (str, "active"),
    "run.model": (str, "lmut"),
    "run.out": (str, "out"),
    "run.transitions": (int, 30000),
    "run.batch_size": (int, 32),
    "run.passes": (int, 1),
    "run.force": (_parse_bool, False),
    "teacher.path": (str, ""),
    "data.path": (str, ""),
    "data.size": (int, 50000),
    "data.test_transitions": (int, 10000),
    "active.epsilon_start": (float, 1.0),
    "active.epsilon_end": (float, 0.0),
    "active.decay_fraction": (float, 0.5),
    **_dataclass_keys("teacher", TeacherConfig, optional=("threshold",)),
    **_dataclass_keys("lmut", LmutParams, optional=("min_split",)),
    "cart.min_leaf": (int, 8),
    "cart.max_depth": (int, 30),
    **_dataclass_keys("cut", CutParams),
    "eval.folds": (int, 10),
    "eval.fold": (int, 9),
    "eval.cv": (_parse_bool, False),
    "eval.play_episodes": (int, 100),
    "eval.play_seed": (int, 0),
    "eval.window": (int, 1000),
    "interpret.top_k": (int, 10),
    "interpret.probes": (int, 100),
    "report.figures": (_parse_bool, True),
}

# keys that only say where things live; they do not change results
LOCATION_KEYS = ("run.out", "teacher.path", "data.path", "run.force", "report.figures")

# sections feeding each stage (cumulative along the pipeline)
STAGES = ("train-teacher", "collect", "mimic-train", "fidelity-eval", "play-eval", "interpret")
_STAGE_PREFIXES = {
    "train-teacher": ("env.", "teacher.", "run.seed", "run.mode", "data.size"),
    "collect": ("active.", "run.transitions", "data.test_transitions"),
    "mimic-train": ("lmut.", "cart.", "cut.", "run.model", "run.batch_size", "run.passes", "eval.fold",
                    "eval.folds", "eval.window"),
    "fidelity-eval": ("eval.cv",),
    "play-eval": ("eval.play_",),
    "interpret": ("interpret.",),
}


def parse_config_text(text: str, source="<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, str(path))


class RunConfig:
    """Resolved settings.

    Precedence, lowest first: built-in defaults, per-environment defaults,
    config file, command-line flags.
    """

    def __init__(self, file_values=None, cli_values=None):
        raw = dict(file_values or {})
        raw.update({k: v for k, v in (cli_values or {}).items() if v is not None})
        unknown = sorted(set(raw) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown keys: {', '.join(unknown)}")
        values = {k: d for k, (_, d) in KEYS.items()}
        env = str(raw.get("env.name", values["env.name"]))
        if env not in DEFAULT_CONFIGS:
            raise ConfigError(f"unknown environment {env!r}; choose from {sorted(DEFAULT_CONFIGS)}")
        for k, v in DEFAULT_CONFIGS[env].items():
            values[f"teacher.{k}"] = tuple(v) if isinstance(v, list) else v
        for k, v in MIMIC_DEFAULTS.get(env, {}).items():
            values[f"lmut.{k}"] = v
        seeds_teacher = "teacher.seed" not in raw
        for k, v in raw.items():
            parser = KEYS[k][0]
            try:
                values[k] = parser(v) if isinstance(v, str) else v
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
        if seeds_teacher:
            values["teacher.seed"] = values["run.seed"]
        self.values = values
        self._validate()

    def __getitem__(self, key):
        return self.values[key]

    def _validate(self):
        v = self.values
        if v["run.mode"] not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {v['run.mode']!r}")
        if v["run.model"] not in MODELS:
            raise ConfigError(f"run.model must be one of {MODELS}, got {v['run.model']!r}")
        for k in ("run.transitions", "run.batch_size", "run.passes", "data.size", "eval.folds",
                  "eval.play_episodes", "eval.window", "cart.min_leaf", "cart.max_depth"):
            if v[k] < 1:
                raise ConfigError(f"{k} must be positive")
        if v["data.test_transitions"] < 0 or v["interpret.top_k"] < 0 or v["interpret.probes"] < 0:
            raise ConfigError("data.test_transitions, interpret.top_k and interpret.probes must be >= 0")
        if not 0 <= v["eval.fold"] < v["eval.folds"]:
            raise ConfigError(f"eval.fold must lie in [0, {v['eval.folds']})")
        for k in ("active.epsilon_start", "active.epsilon_end", "active.decay_fraction"):
            if not 0 <= v[k] <= 1:
                raise ConfigError(f"{k} must lie in [0, 1]")
        if v["run.mode"] == "experience" and v["data.size"] < v["eval.folds"]:
            raise ConfigError("data.size must be at least eval.folds")
        # dataclass validation
        try:
            self.teacher_config()
            self.lmut_params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    # --- derived objects
    def section(self, name):
        prefix = name + "."
        return {k[len(prefix):]: val for k, val in self.values.items() if k.startswith(prefix)}

    def teacher_config(self) -> TeacherConfig:
        d = self.section("teacher")
        d.pop("path", None)
        return TeacherConfig(**d)

    def lmut_params(self) -> LmutParams:
        return LmutParams(**self.section("lmut"))

    def cut_params(self) -> CutParams:
        return CutParams(**self.section("cut"))

    @property
    def env(self) -> str:
        return self.values["env.name"]

    @property
    def out(self) -> str:
        return self.values["run.out"]

    def path(self, name) -> str:
        """Artifact path; teacher and data locations may be overridden."""
        if name == "teacher.json" and self.values["teacher.path"]:
            return self.values["teacher.path"]
        if name == "data.ndjson" and self.values["data.path"]:
            return self.values["data.path"]
        return os.path.join(self.out, name)

    # --- hashing and manifests
    def semantic(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in sorted(self.values.items()) if k not in LOCATION_KEYS}

    def config_hash(self) -> str:
        return _digest(self.semantic())

    def stage_hash(self, stage: str) -> str:
        """Hash of the settings that ``stage`` and everything upstream depend on."""
        prefixes = ()
        for s in STAGES:
            prefixes += _STAGE_PREFIXES[s]
            if s == stage:
                break
        else:
            raise KeyError(stage)
        sem = self.semantic()
        return _digest({k: val for k, val in sem.items() if k.startswith(prefixes)})

    def manifest(self, stage: str) -> dict:
        return {
            "tool": "lmutree",
            "stage": stage,
            "env": self.env,
            "config_hash": self.config_hash(),
            "stage_hash": self.stage_hash(stage),
            "seeds": {
                "run": self.values["run.seed"],
                "teacher": self.values["teacher.seed"],
                "play": self.values["eval.play_seed"],
            },
            "versions": versions(),
        }

    def to_text(self) -> str:
        """The resolved configuration in the file format."""
        lines = []
        for k, v in sorted(self.values.items()):
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


def _digest(d) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def versions() -> dict:
    import numba
    import numpy
    import scipy

    from . import __version__

    return {
        "lmutree": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }
