"""Config file loading (TOML or JSON).

Precedence is flags > environment > config file > defaults. The environment
supplies the config path (``LVA_CONFIG``) and API keys; secrets are never
read from config files or flags.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import tomli

from .backends.remote import API_KEY_ENV, EndpointConfig
from .evaluation import EvalConfig
from .orchestrator import RunConfig
from .rewards import DEFAULT_ALPHA, GrpoConfig

CONFIG_ENV = "LVA_CONFIG"
ROLES = ("master", "grounding", "vision")
_SECRET_KEYS = {"api_key", "key", "token", "secret", "password"}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


@dataclass
class AppConfig:
    run: RunConfig = RunConfig()
    eval: EvalConfig = EvalConfig()
    alpha: float = DEFAULT_ALPHA
    grpo: GrpoConfig = GrpoConfig()
    backend: str = "scripted"
    fixtures: Optional[str] = None
    seed: Optional[int] = None
    endpoints: dict[str, EndpointConfig] = field(default_factory=dict)


def _fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(key: str, value: Any, default: Any) -> Any:
    if default is None or isinstance(value, type(default)):
        return value
    if isinstance(default, bool):
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    raise ConfigError(key, f"expected {type(default).__name__}, got {type(value).__name__}")


def _section(prefix: str, table: Any, cls, base=None, skip=()) -> Any:
    if not isinstance(table, dict):
        raise ConfigError(prefix, "expected a table")
    known = _fields(cls)
    base = base if base is not None else cls()
    changes = {}
    for k, v in table.items():
        key = f"{prefix}.{k}"
        if k in _SECRET_KEYS:
            raise ConfigError(key, "secrets must come from environment variables, not config files")
        if k not in known or k in skip:
            raise ConfigError(key, "unknown key")
        changes[k] = _coerce(key, v, getattr(base, k))
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as exc:
        raise ConfigError(prefix, str(exc)) from None


def _endpoint(role: str, table: Any) -> EndpointConfig:
    prefix = f"endpoints.{role}"
    if not isinstance(table, dict):
        raise ConfigError(prefix, "expected a table")
    for required in ("base_url", "model"):
        if required not in table:
            raise ConfigError(f"{prefix}.{required}", "missing")
    seed = EndpointConfig(base_url=table["base_url"], model=table["model"], api_key_env=API_KEY_ENV[role])
    return _section(prefix, table, EndpointConfig, seed, skip=("api_key_env",))


def parse_config(data: dict) -> AppConfig:
    cfg = AppConfig()
    for top, value in data.items():
        if top == "run":
            cfg.run = _section("run", value, RunConfig)
        elif top == "eval":
            cfg.eval = _section("eval", value, EvalConfig, skip=("run",))
        elif top == "reward":
            if not isinstance(value, dict):
                raise ConfigError("reward", "expected a table")
            for k, v in value.items():
                if k != "alpha":
                    raise ConfigError(f"reward.{k}", "unknown key")
                cfg.alpha = _coerce("reward.alpha", v, 0.0)
                if cfg.alpha < 0:
                    raise ConfigError("reward.alpha", "must be non-negative")
        elif top == "grpo":
            cfg.grpo = _section("grpo", value, GrpoConfig)
        elif top == "backend":
            if not isinstance(value, dict):
                raise ConfigError("backend", "expected a table")
            for k, v in value.items():
                if k == "kind":
                    if v not in ("scripted", "remote"):
                        raise ConfigError("backend.kind", "must be 'scripted' or 'remote'")
                    cfg.backend = v
                elif k == "fixtures":
                    cfg.fixtures = str(v)
                elif k == "seed":
                    cfg.seed = _coerce("backend.seed", v, 0)
                else:
                    raise ConfigError(f"backend.{k}", "unknown key")
        elif top == "endpoints":
            if not isinstance(value, dict):
                raise ConfigError("endpoints", "expected a table")
            for role, table in value.items():
                if role not in ROLES:
                    raise ConfigError(f"endpoints.{role}", "unknown role")
                cfg.endpoints[role] = _endpoint(role, table)
        else:
            raise ConfigError(top, "unknown section")
    return cfg


def load_config(path: Union[str, Path, None] = None) -> AppConfig:
    """Load ``path``, else ``$LVA_CONFIG``, else defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if not path:
        return AppConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError("<file>", f"{path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix == ".json" else tomli.loads(text)
    except (ValueError, tomli.TOMLDecodeError) as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from None
    return parse_config(data)
