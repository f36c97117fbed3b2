"""Run configuration: one flat dataclass, a flat YAML file, and CLI overrides.

Precedence is flag > file > default.  Unknown keys, unparsable files and
invalid values raise distinct errors so the CLI can report which one it was.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

KINDS = ("count-reach", "train-iql", "train-qmix", "learn-repr", "cluster", "grad-check")
STRATEGY_CHOICES = ("seg", "eps-greedy", "both")


class ConfigError(ValueError):
    """Base class for configuration problems."""


class ConfigParseError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    def __init__(self, key: str, source: str = "config"):
        self.key = key
        super().__init__(f"unknown {source} key {key!r}")


class InvalidValueError(ConfigError):
    def __init__(self, key: str, value: Any, reason: str):
        self.key = key
        super().__init__(f"invalid value for {key!r}: {value!r} ({reason})")


@dataclass
class RunConfig:
    kind: str = "train-iql"
    seed: int = 0
    out: str = "runs/latest"
    trials: int = 10
    strategy: str = "both"

    # coordination game
    N: int = 5
    K: int = 4
    M: int = 3
    episode_len: int = 50
    gamma: float = 0.99

    # epsilon schedule
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal: int = 30_000

    # count-reach
    eps: float = 0.5
    count_steps: int = 1_000_000
    nk_values: str = "2,4,6,8,10"
    count_agents: int = 2  # 0 sweeps every (N, K) factor pair of NK

    # train-iql
    alpha: float = 0.015
    iql_steps: int = 250_000
    eval_interval: int = 1_000

    # train-qmix
    qmix_steps: int = 300_000
    qmix_eval_interval: int = 5_000
    hidden_dim: int = 64
    mix_dim: int = 32
    lr: float = 5e-4
    batch_size: int = 32
    buffer_capacity: int = 5_000
    target_update_interval: int = 200
    stop_at_reward: float = -1.0  # negative disables early stopping
    stop_window: int = 3

    # grouped-effects environment and action representations
    g_agents: int = 2
    g_actions: int = 6
    g_groups: int = 2
    noise: float = 0.0
    repr_dim: int = 20
    pred_hidden: int = 128
    lambda_e: float = 10.0
    repr_budget: int = 50_000
    encoder_init_scale: float = 0.01
    n_clusters: int = 0  # 0 uses the environment's true group count
    repr_file: str = ""

    # grad-check
    grad_instances: int = 20
    grad_tol: float = 1e-4

    def validate(self) -> "RunConfig":
        def need(ok: bool, key: str, reason: str):
            if not ok:
                raise InvalidValueError(key, getattr(self, key), reason)

        need(self.kind in KINDS, "kind", f"one of {', '.join(KINDS)}")
        need(self.strategy in STRATEGY_CHOICES, "strategy", f"one of {', '.join(STRATEGY_CHOICES)}")
        need(self.seed >= 0, "seed", "must be >= 0")
        need(self.trials >= 1, "trials", "must be >= 1")
        need(self.N >= 1, "N", "must be >= 1")
        need(self.K >= 1, "K", "must be >= 1")
        need(self.M >= 2, "M", "must be >= 2")
        need(self.episode_len >= 1, "episode_len", "must be >= 1")
        need(0.0 <= self.gamma < 1.0, "gamma", "must lie in [0, 1)")
        for key in ("eps_start", "eps_end", "eps"):
            need(0.0 <= getattr(self, key) <= 1.0, key, "must lie in [0, 1]")
        need(self.eps_anneal >= 0, "eps_anneal", "must be >= 0")
        need(self.count_steps >= 0, "count_steps", "must be >= 0")
        try:
            nk = self.nk_list()
        except ValueError:
            raise InvalidValueError("nk_values", self.nk_values, "comma-separated positive integers") from None
        need(len(nk) > 0 and min(nk) >= 1, "nk_values", "comma-separated positive integers")
        if self.count_agents:
            need(all(v % self.count_agents == 0 for v in nk), "count_agents", "must divide every NK value")
        need(self.count_agents >= 0, "count_agents", "must be >= 0")
        need(0.0 <= self.alpha <= 1.0, "alpha", "must lie in [0, 1]")
        for key in ("iql_steps", "qmix_steps", "repr_budget"):
            need(getattr(self, key) >= 0, key, "must be >= 0")
        for key in ("eval_interval", "qmix_eval_interval", "hidden_dim", "mix_dim", "batch_size",
                    "buffer_capacity", "target_update_interval", "stop_window", "repr_dim", "pred_hidden", "grad_instances"):
            need(getattr(self, key) >= 1, key, "must be >= 1")
        need(self.lr > 0, "lr", "must be > 0")
        need(self.g_agents >= 1, "g_agents", "must be >= 1")
        need(self.g_groups >= 2, "g_groups", "must be >= 2")
        need(self.g_actions >= self.g_groups, "g_actions", "must be >= g_groups")
        need(self.noise >= 0, "noise", "must be >= 0")
        need(self.lambda_e >= 0, "lambda_e", "must be >= 0")
        need(self.encoder_init_scale > 0, "encoder_init_scale", "must be > 0")
        need(self.n_clusters >= 0, "n_clusters", "must be >= 0")
        need(self.grad_tol > 0, "grad_tol", "must be > 0")
        return self

    def nk_list(self) -> list[int]:
        return [int(v) for v in str(self.nk_values).split(",") if v.strip()]

    def strategies(self) -> list[str]:
        return ["seg", "eps-greedy"] if self.strategy == "both" else [self.strategy]

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def run_id(self) -> str:
        """Stable id derived from the resolved configuration (output directory excluded)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def coerce(key: str, value: Any) -> Any:
    if key not in FIELD_TYPES:
        raise UnknownKeyError(key)
    kind = FIELD_TYPES[key]
    if isinstance(value, (dict, list)):
        raise InvalidValueError(key, value, "nested values are not allowed")
    if isinstance(value, bool):
        raise InvalidValueError(key, value, f"expected {kind}, got a boolean")
    if kind == "str" and not isinstance(value, (str, int, float)):
        raise InvalidValueError(key, value, "expected a string")
    try:
        if kind == "int" and isinstance(value, (str, float)):
            # accept "30000", "3e4" and 30000.0 but not 2.5
            as_float = float(value)
            if not as_float.is_integer():
                raise ValueError
            return int(as_float)
        return _CASTS[kind](value)
    except (TypeError, ValueError, OverflowError):
        raise InvalidValueError(key, value, f"expected {kind}") from None


def load_file(path: str | Path | None) -> dict[str, Any]:
    """Read a flat ``key: value`` YAML mapping; an empty file is an empty mapping."""
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigParseError(f"cannot read config file {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"cannot parse config file {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigParseError(f"config file {path} must hold a key: value mapping")
    return {str(k): v for k, v in data.items()}


def parse_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    for source in (load_file(path), overrides or {}):
        for key, value in source.items():
            values[key] = coerce(key, value)
    return RunConfig(**values).validate()


def add_override_flags(parser: argparse.ArgumentParser) -> None:
    """One ``--<field>`` flag per config field (kind excluded), all defaulting to unset."""
    parser.add_argument("--config", default=None, help="flat YAML file of key: value pairs")
    for f in fields(RunConfig):
        if f.name == "kind":
            continue
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        parser.add_argument(*flags, dest=f.name, default=None, metavar=f.type.upper(),
                            help=f"default {f.default!r}")


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    return {f.name: getattr(args, f.name) for f in fields(RunConfig)
            if f.name != "kind" and getattr(args, f.name, None) is not None}
