"""Engine configuration: one YAML file, ``${VAR}`` / ``${VAR:-default}``
interpolation from the environment, relative paths resolved against the
file's directory. Without a file the shipped data set is used."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from gridflow.gateway import GatewayConfig
from gridflow.retrieval import RetrievalMode

_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


class ConfigError(ValueError):
    pass


def interpolate(value: Any, environ: Mapping[str, str] | None = None) -> Any:
    env = os.environ if environ is None else environ

    def sub(m: re.Match) -> str:
        name, default = m.group(1), m.group(2)
        if name in env:
            return env[name]
        if default is not None:
            return default
        raise ConfigError(f"environment variable {name} is not set")

    if isinstance(value, str):
        return _VAR.sub(sub, value)
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    return value


def _shipped(name: str) -> Path:
    from gridflow.fixtures import data_path

    return data_path(name)


@dataclass(frozen=True)
class EngineConfig:
    archive: Path = field(default_factory=lambda: _shipped("archive.jsonl"))
    rules: Path = field(default_factory=lambda: _shipped("rules.json"))
    fixture: Path = field(default_factory=lambda: _shipped("grid_fixture.json"))
    gateway: GatewayConfig = field(default_factory=lambda: GatewayConfig(
        embed_overrides=str(_shipped("planted_overrides.json"))))
    filter_gateway: GatewayConfig | None = None
    retrieval: RetrievalMode = field(default_factory=RetrievalMode)
    supervisor: bool = True
    strict_supervisor: bool = False
    strict_env: bool = False
    budget: int = 30
    output_dir: Path = Path("runs")
    embedding_cache: Path | None = None

    def check(self) -> "EngineConfig":
        for label in ("archive", "rules", "fixture"):
            path = getattr(self, label)
            if not Path(path).is_file():
                raise ConfigError(f"{label} file not found: {path}")
        if self.budget < 1:
            raise ConfigError("budget must be at least 1")
        for gw in (self.gateway, self.filter_gateway):
            if gw is not None and gw.mock_script and not Path(gw.mock_script).is_file():
                raise ConfigError(f"mock script not found: {gw.mock_script}")
            if gw is not None and gw.embed_overrides and not Path(gw.embed_overrides).is_file():
                raise ConfigError(f"embedding override file not found: {gw.embed_overrides}")
        return self

    def with_overrides(self, **changes: Any) -> "EngineConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


_KEYS = {"archive", "rules", "fixture", "gateway", "filter_gateway", "retrieval", "supervisor",
         "strict_supervisor", "strict_env", "budget", "output_dir", "embedding_cache"}


def _gateway(data: Any, base: Path, label: str) -> GatewayConfig:
    if not isinstance(data, Mapping):
        raise ConfigError(f"'{label}' must be a mapping")
    data = dict(data)
    for key in ("mock_script", "embed_overrides"):
        if data.get(key):
            data[key] = str(base / data[key])
    try:
        return GatewayConfig.from_mapping(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{label}: {exc}") from None


def config_from_mapping(data: Mapping[str, Any] | None, base: str | os.PathLike = ".",
                        environ: Mapping[str, str] | None = None) -> EngineConfig:
    data = interpolate(dict(data or {}), environ)
    unknown = sorted(set(data) - _KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    base = Path(base)
    kw: dict[str, Any] = {}
    for key in ("archive", "rules", "fixture", "output_dir", "embedding_cache"):
        if data.get(key) is not None:
            kw[key] = base / str(data[key])
    if "gateway" in data:
        kw["gateway"] = _gateway(data["gateway"], base, "gateway")
    if data.get("filter_gateway") is not None:
        kw["filter_gateway"] = _gateway(data["filter_gateway"], base, "filter_gateway")
    if "retrieval" in data:
        try:
            kw["retrieval"] = RetrievalMode.parse(str(data["retrieval"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    for key in ("supervisor", "strict_supervisor", "strict_env"):
        if key in data:
            if not isinstance(data[key], bool):
                raise ConfigError(f"'{key}' must be true or false")
            kw[key] = data[key]
    if "budget" in data:
        try:
            kw["budget"] = int(data["budget"])
        except (TypeError, ValueError):
            raise ConfigError("'budget' must be an integer") from None
    return EngineConfig(**kw)


def load_config(path: str | os.PathLike | None, environ: Mapping[str, str] | None = None) -> EngineConfig:
    if path is None:
        return EngineConfig().check()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_mapping(data, path.parent, environ).check()
