"""Run configuration: YAML document validated against a JSON schema."""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import yaml

from .agent import SacConfig
from .env import EnvConfig
from .errors import ConfigError
from .fatigue import SnCurve
from .fea import Material
from .reward import VARIANTS, ArnConfig

SCHEMA_VERSION = 1

_pair = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_num = {"type": "number"}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "lifespan-rl run configuration",
    "type": "object",
    "required": ["schema_version", "mesh"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "variant": {"enum": list(VARIANTS)},
        "seed": {"type": "integer", "minimum": 0},
        "episodes": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "mesh": {"type": "string"},
        "checkpoint_every": {"type": "integer", "minimum": 0},
        "material": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"youngs_modulus": _num, "poisson_ratio": _num, "thickness": _num},
        },
        "sn_curve": {"type": "object", "additionalProperties": False, "properties": {"a": _num, "b": _num}},
        "fatigue": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"include_residuals": {"type": "boolean"}},
        },
        "env": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "friction_range": _pair,
                "mass_range": _pair,
                "horizon": {"type": "integer", "minimum": 1},
                "a_max": _num,
                "goal_radius": _num,
                "alpha_dis": _num,
                "object_radius": _num,
                "goal": _pair,
                "tool_start": _pair,
                "spawn_low": _pair,
                "spawn_high": _pair,
                "workspace_low": _pair,
                "workspace_high": _pair,
            },
        },
        "arn": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "beta": _num,
                "alpha_s": _num,
                "gamma_b": _num,
                "rul_cap": _num,
                "clamp": {"type": "boolean"},
                "capacity": {"type": "integer", "minimum": 1},
            },
        },
        "sac": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hidden": {"type": "integer", "minimum": 1},
                "gamma": _num,
                "tau": _num,
                "lr": _num,
                "batch_size": {"type": "integer", "minimum": 1},
                "alpha": _num,
                "auto_alpha": {"type": "boolean"},
                "target_entropy": _num,
                "obs_scale": _num,
                "gradient_steps": {"type": "integer", "minimum": 0},
                "replay_capacity": {"type": "integer", "minimum": 1},
                "random_episodes": {"type": "integer", "minimum": 0},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"trials": {"type": "integer", "minimum": 0}, "seed": {"type": "integer", "minimum": 0}},
        },
    },
}

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "variant": "ours",
    "seed": 0,
    "episodes": 2500,
    "output_dir": "runs",
    "checkpoint_every": 100,
    "material": {"youngs_modulus": 2.0e9, "poisson_ratio": 0.35, "thickness": 0.01},
    "sn_curve": {"a": 1.0e39, "b": 6.0},
    "fatigue": {"include_residuals": True},
    "env": {},
    "arn": {},
    "sac": {"gradient_steps": 1, "replay_capacity": 100_000, "random_episodes": 10},
    "eval": {"trials": 100, "seed": 10_000},
}

# YAML 1.1 only accepts floats with a dot and a signed exponent; widen that.
_Loader = type("_Loader", (yaml.SafeLoader,), {})
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _build(cls, values: dict, **extra):
    names = {f.name for f in fields(cls)}
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items() if k in names}
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


@dataclass(frozen=True)
class TrainingKnobs:
    gradient_steps: int = 1
    replay_capacity: int = 100_000
    random_episodes: int = 10


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    base_dir: Path

    @property
    def variant(self) -> str:
        return self.raw["variant"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def episodes(self) -> int:
        return int(self.raw["episodes"])

    @property
    def checkpoint_every(self) -> int:
        return int(self.raw["checkpoint_every"])

    @property
    def mesh_path(self) -> Path:
        p = Path(self.raw["mesh"])
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def output_dir(self) -> Path:
        p = Path(self.raw["output_dir"])
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def env(self) -> EnvConfig:
        return _build(EnvConfig, self.raw["env"])

    @property
    def material(self) -> Material:
        return _build(Material, self.raw["material"])

    @property
    def sn_curve(self) -> SnCurve:
        try:
            return SnCurve(float(self.raw["sn_curve"]["a"]), float(self.raw["sn_curve"]["b"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid sn_curve: {exc}") from exc

    @property
    def include_residuals(self) -> bool:
        return bool(self.raw["fatigue"]["include_residuals"])

    @property
    def arn(self) -> ArnConfig:
        return _build(ArnConfig, self.raw["arn"])

    @property
    def sac(self) -> SacConfig:
        return _build(SacConfig, self.raw["sac"], a_max=self.env.a_max)

    @property
    def knobs(self) -> TrainingKnobs:
        return _build(TrainingKnobs, self.raw["sac"])

    @property
    def eval_trials(self) -> int:
        return int(self.raw["eval"]["trials"])

    @property
    def eval_seed(self) -> int:
        return int(self.raw["eval"]["seed"])

    def with_overrides(self, **overrides) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        for key, value in overrides.items():
            if value is not None:
                raw[key] = value
        return from_dict(raw, self.base_dir)

    def digest(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def check(self) -> "RunConfig":
        """Build every component once so errors surface before training."""
        self.env, self.material, self.sn_curve, self.arn, self.sac, self.knobs
        if not self.mesh_path.is_file():
            raise ConfigError(f"mesh file not found: {self.mesh_path}")
        return self


def from_dict(data: dict, base_dir: str | Path = ".") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    merged = _merge(DEFAULTS, data)
    try:
        jsonschema.validate(merged, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    return RunConfig(merged, Path(base_dir))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.load(path.read_text(), Loader=_Loader)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return from_dict(data, path.parent)


def default_config_path() -> Path:
    return Path(str(resources.files("lifespan_rl") / "data" / "object_moving.yaml"))
