"""Experiment configuration: YAML files with an ``extends`` chain."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

PATH_KEYS = ("train_manifest", "speakers", "lexicon", "new_text")


class ConfigError(ValueError):
    pass


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _load_raw(path: Path, seen: tuple = ()) -> dict:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"circular extends through {path}")
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    data = _resolve_paths(data, path.parent)
    parent = data.pop("extends", None)
    if parent is None:
        return data
    return deep_merge(_load_raw(path.parent / parent, seen + (path,)), data)


def _resolve_paths(data: dict, root: Path) -> dict:
    paths = data.get("paths")
    if not isinstance(paths, dict):
        return data
    data = dict(data)
    resolved = {}
    for key, value in paths.items():
        if key == "test_sets" and isinstance(value, dict):
            resolved[key] = {k: str((root / v).resolve()) for k, v in value.items()}
        elif isinstance(value, str):
            resolved[key] = str((root / value).resolve())
        else:
            resolved[key] = value
    data["paths"] = resolved
    return data


def load_config(path, overrides: dict | None = None, check_paths: bool = True) -> dict:
    """Merged configuration with paths made absolute.

    ``overrides`` is merged last (e.g. ``{"seed": 3}`` from the command line).
    """
    cfg = deep_merge(_load_raw(Path(path)), overrides or {})
    if "seed" not in cfg or not isinstance(cfg["seed"], int):
        raise ConfigError("config must set an integer 'seed'")
    variant = cfg.get("decoder", {}).get("variant")
    from synthasr.tts.model import VARIANTS

    if variant is not None and variant not in VARIANTS:
        raise ConfigError(f"unknown decoder variant {variant!r}")
    if check_paths:
        missing = [f"paths.{k}: {v}" for k, v in cfg.get("paths", {}).items()
                   if k in PATH_KEYS and v and not Path(v).exists()]
        missing += [f"paths.test_sets.{k}: {v}" for k, v in cfg.get("paths", {}).get("test_sets", {}).items()
                    if not Path(v).exists()]
        if missing:
            raise ConfigError("referenced paths do not exist:\n  " + "\n  ".join(missing))
    return cfg


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]
