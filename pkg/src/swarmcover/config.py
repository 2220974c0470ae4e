"""JSON-friendly descriptions of domains, environments and training runs.

A domain spec is one of::

    {"type": "square"}                               # unit square [0, 1]^2
    {"type": "regular", "sides": 6, "area": 1.0}
    {"type": "random", "seed": 3, "sides": 8, "irregularity": 0.5, "area": 1.0}
    {"type": "vertices", "vertices": [[x, y], ...]}
    {"type": "file", "path": "poly.json"}            # JSON array of [x, y]
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from swarmcover.dynamics import DynamicsConfig
from swarmcover.env import EnvConfig
from swarmcover.geometry import Polygon, make_random_polygon, make_regular_polygon, unit_square


class ConfigError(ValueError):
    pass


def build_polygon(spec, base_dir=".") -> Polygon:
    if isinstance(spec, str):
        spec = {"type": spec}
    kind = spec.get("type", "square")
    if kind == "square":
        return unit_square()
    if kind == "regular":
        return make_regular_polygon(int(spec.get("sides", 4)), float(spec.get("area", 1.0)))
    if kind == "random":
        return make_random_polygon(int(spec.get("seed", 0)), int(spec.get("sides", 8)),
                                   float(spec.get("irregularity", 0.5)),
                                   float(spec.get("area", 1.0)))
    if kind == "vertices":
        return Polygon(spec["vertices"])
    if kind == "file":
        path = Path(base_dir) / spec["path"]
        if not path.exists():
            raise ConfigError(f"polygon file not found: {path}")
        try:
            return Polygon.from_json(path.read_text())
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad polygon file {path}: {exc}") from exc
    raise ConfigError(f"unknown domain type {kind!r}")


def domain_name(spec) -> str:
    if isinstance(spec, str):
        return spec
    if "name" in spec:
        return spec["name"]
    kind = spec.get("type", "square")
    if kind == "regular":
        return f"regular{spec.get('sides', 4)}"
    if kind == "random":
        return f"random{spec.get('sides', 8)}s{spec.get('seed', 0)}"
    if kind == "file":
        return Path(spec["path"]).stem
    return kind


def build_dynamics(spec: dict | None) -> DynamicsConfig:
    spec = spec or {}
    return DynamicsConfig(v_max=float(spec.get("v_max", 1.0)), a_max=float(spec.get("a_max", 1.0)),
                          dt=float(spec.get("dt", 0.02)))


def build_env(spec: dict, base_dir=".", defaults: dict | None = None) -> EnvConfig:
    merged = dict(defaults or {})
    merged.update(spec)
    return EnvConfig(
        poly=build_polygon(merged.get("domain", "square"), base_dir),
        n=int(merged.get("n", 9)),
        dynamics=build_dynamics(merged.get("dynamics")),
        horizon=float(merged.get("horizon", 30.0)),
        gamma=float(merged.get("gamma", 0.99)),
        seed=int(merged.get("seed", 0)),
        c=float(merged.get("c", 1.0)),
    )


@dataclass
class TrainConfig:
    envs: list = field(default_factory=lambda: [{"n": 3, "domain": "square"}])
    env_defaults: dict = field(default_factory=dict)
    gamma: float = 0.99
    clip_eps: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    iterations: int = 20
    trajectories_per_env: int = 4
    update_epochs: int = 10
    minibatch_size: int = 1024
    entropy_coeff: float = 0.0
    normalize_advantages: bool = True
    optimizer: str = "sgd"
    max_grad_norm: float | None = None
    seed: int = 0
    checkpoint_every: int = 10
    actor: dict = field(default_factory=dict)
    critic: dict = field(default_factory=dict)
    # pre-training phase
    bc_episodes: int = 0
    bc_epochs: int = 20
    bc_lr: float = 1e-3
    bc_batch: int = 512
    bc_optimizer: str = "adam"
    critic_pretrain: bool = False
    critic_pretrain_epochs: int = 5

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if not 0.0 <= self.clip_eps < 1.0:
            raise ConfigError("clip_eps must lie in [0, 1)")
        if self.optimizer not in ("sgd", "adam") or self.bc_optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer must be 'sgd' or 'adam'")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def env_configs(self, base_dir=".") -> list[EnvConfig]:
        defaults = {"gamma": self.gamma, **self.env_defaults}
        return [build_env(spec, base_dir, defaults) for spec in self.envs]


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
