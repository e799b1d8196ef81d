"""Declarative run configuration.

A run is described by one YAML file; every omitted key takes a recorded
default, unknown keys are rejected with the file line they appear on, and
the fully resolved configuration is written back into the run directory so
a run is reproducible from its artifacts alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import yaml

from .ars import ArsConfig
from .envs import ENV_FAMILIES, TRAINING_BOUNDS, RangeSpec
from .errors import ConfigError
from .harness import SUITE_TAGS
from .strategy_opt import SO_METHODS
from .trainers import METHODS, MsoConfig

OUTPUT_ROOT_ENV = "METASTRAT_RUNS"

_DEFAULTS = {
    "method": "mso",
    "env": "sliding_mass",
    "seed": 0,
    "workers": 1,
    "gamma": 1.0,
    "out_dir": None,
    "mso": {
        "n_tasks": 5,
        "inner_updates": 30,
        "outer_iterations": 50,
        "so_budget_train": 25,
        "so_init_samples": 5,
        "so_method": "bo",
        "latent_dim": 2,
    },
    "ars": {
        "num_perturbations": 92,
        "top_b": 23,
        "step_size": 0.02,
        "noise_std": 0.025,
        "episodes_per_eval": 1,
    },
    "range": {name: list(bounds) for name, bounds in TRAINING_BOUNDS.items()},
    "adapt": {"episodes": 15},
    "eval": {
        "suites": ["TRAINING_RANGE", "EXTENDED"],
        "tasks": 100,
        "episodes": 15,
        "seed": 0,
    },
}


@dataclass
class RunConfig:
    resolved: dict  # every default made explicit
    training: MsoConfig
    out_dir: str
    adapt_episodes: int
    eval_suites: list
    eval_tasks: int
    eval_episodes: int
    eval_seed: int


def _key_lines(path: str) -> dict:
    """Map 'dotted.key.path' -> 1-based line number from the YAML node tree."""
    with open(path) as fh:
        try:
            root = yaml.compose(fh)
        except yaml.YAMLError as err:
            raise ConfigError(f"{path}: invalid YAML: {err}") from err
    lines: dict[str, int] = {}

    def walk(node, prefix):
        if not isinstance(node, yaml.MappingNode):
            return
        for key_node, val_node in node.value:
            key = str(key_node.value)
            dotted = f"{prefix}.{key}" if prefix else key
            lines[dotted] = key_node.start_mark.line + 1
            walk(val_node, dotted)

    if root is not None:
        walk(root, "")
    return lines


def _merge(defaults, data, path, lines, prefix=""):
    """Defaults overlaid with user data; unknown keys are errors."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        where = f"{path}:{lines.get(prefix, '?')}" if prefix else path
        raise ConfigError(f"{where}: section {prefix or '<root>'!r} must be a mapping")
    out = {}
    for key, default in defaults.items():
        dotted = f"{prefix}.{key}" if prefix else key
        if isinstance(default, dict):
            out[key] = _merge(default, data.get(key), path, lines, dotted)
        elif key in data:
            out[key] = data[key]
        else:
            out[key] = default
    for key in data:
        if key not in defaults:
            dotted = f"{prefix}.{key}" if prefix else key
            line = lines.get(dotted)
            where = f"{path}:{line}" if line else path
            section = f" in section {prefix!r}" if prefix else ""
            raise ConfigError(f"{where}: unknown key {key!r}{section}")
    return out


def _require(cond: bool, path: str, lines: dict, dotted: str, message: str) -> None:
    if not cond:
        line = lines.get(dotted)
        where = f"{path}:{line}" if line else path
        raise ConfigError(f"{where}: {message}")


def load_run_config(path: str) -> RunConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as err:
            raise ConfigError(f"{path}: invalid YAML: {err}") from err
    lines = _key_lines(path)
    resolved = _merge(_DEFAULTS, data, path, lines)

    _require(resolved["method"] in METHODS, path, lines, "method", f"method must be one of {METHODS}")
    _require(resolved["env"] in ENV_FAMILIES, path, lines, "env", f"env must be one of {sorted(ENV_FAMILIES)}")
    _require(isinstance(resolved["seed"], int), path, lines, "seed", "seed must be an integer")
    _require(isinstance(resolved["workers"], int) and resolved["workers"] >= 1, path, lines, "workers", "workers must be a positive integer")
    _require(0 < float(resolved["gamma"]) <= 1.0, path, lines, "gamma", "gamma must be in (0, 1]")
    _require(
        resolved["mso"]["so_method"] in SO_METHODS,
        path,
        lines,
        "mso.so_method",
        f"so_method must be one of {SO_METHODS}",
    )
    for key in ("n_tasks", "inner_updates", "outer_iterations", "so_budget_train", "so_init_samples", "latent_dim"):
        _require(
            isinstance(resolved["mso"][key], int) and resolved["mso"][key] >= 1,
            path,
            lines,
            f"mso.{key}",
            f"{key} must be a positive integer",
        )
    for key, val in resolved["range"].items():
        _require(
            isinstance(val, (list, tuple)) and len(val) == 2 and float(val[0]) <= float(val[1]),
            path,
            lines,
            f"range.{key}",
            f"range.{key} must be a [lower, upper] pair with lower <= upper",
        )
    _require(
        isinstance(resolved["adapt"]["episodes"], int) and resolved["adapt"]["episodes"] >= 1,
        path,
        lines,
        "adapt.episodes",
        "adapt.episodes must be a positive integer",
    )
    for suite in resolved["eval"]["suites"]:
        _require(suite in SUITE_TAGS, path, lines, "eval.suites", f"unknown suite {suite!r}; valid: {SUITE_TAGS}")
    for key in ("tasks", "episodes"):
        _require(
            isinstance(resolved["eval"][key], int) and resolved["eval"][key] >= 1,
            path,
            lines,
            f"eval.{key}",
            f"eval.{key} must be a positive integer",
        )

    range_spec = RangeSpec.training(overrides={k: tuple(v) for k, v in resolved["range"].items()})
    training = MsoConfig(
        method=resolved["method"],
        env_name=resolved["env"],
        n_tasks=resolved["mso"]["n_tasks"],
        inner_updates=resolved["mso"]["inner_updates"],
        outer_iterations=resolved["mso"]["outer_iterations"],
        so_budget_train=resolved["mso"]["so_budget_train"],
        so_init_samples=resolved["mso"]["so_init_samples"],
        so_method=resolved["mso"]["so_method"],
        latent_dim=resolved["mso"]["latent_dim"],
        gamma=float(resolved["gamma"]),
        ars=ArsConfig(**resolved["ars"]),
        range_spec=range_spec,
        seed=resolved["seed"],
        workers=resolved["workers"],
    )
    try:
        training.validate()
    except ConfigError as err:
        raise ConfigError(f"{path}: {err}") from err

    out_dir = resolve_out_dir(resolved)
    return RunConfig(
        resolved=resolved,
        training=training,
        out_dir=out_dir,
        adapt_episodes=resolved["adapt"]["episodes"],
        eval_suites=list(resolved["eval"]["suites"]),
        eval_tasks=resolved["eval"]["tasks"],
        eval_episodes=resolved["eval"]["episodes"],
        eval_seed=resolved["eval"]["seed"],
    )


def resolve_out_dir(resolved: dict) -> str:
    out = resolved.get("out_dir") or f"runs/{resolved['method']}_{resolved['env']}_seed{resolved['seed']}"
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(out):
        out = os.path.join(root, out)
    return out


def dump_resolved(resolved: dict, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(resolved, fh, sort_keys=True, default_flow_style=False)
