"""YAML tool configuration with ``${VAR}`` environment interpolation.

Example::

    suite: suite.jsonl
    output_dir: results
    passes: 10
    batch_size: 8
    sampler:
      command: nvidia-smi --query-gpu=index,power.draw --format=csv,noheader,nounits
      period: 0.1
    endpoints:
      h100pci-7b:
        base_url: http://localhost:8000
        model_id: mistralai/Mistral-7B-Instruct-v0.3
        model: Mistral-7B
        deployment_kind: local
        gpu: H100-PCI
      mistral-free:
        base_url: https://api.mistral.ai
        model_id: open-mistral-7b
        model: Mistral-7B
        deployment_kind: api_free
        schedule: ["06:00", "12:00", "18:00"]

API keys come from ``TOKENJOULE_API_KEY_<ENDPOINT>`` (endpoint name upper-cased,
non-alphanumerics replaced by ``_``), from ``api_key_file``, or from an
``api_key: ${VAR}`` reference. They are never accepted on the command line.
"""

from __future__ import annotations

import os
import re
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .client import EndpointConfig
from .errors import ConfigError
from .power import DEFAULT_PERIOD, CommandSampler, ReplaySampler

_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
ENDPOINT_KEYS = {
    "base_url",
    "model_id",
    "model",
    "deployment_kind",
    "gpu",
    "temperature",
    "seed",
    "request_timeout",
    "max_retries",
    "retry_backoff",
    "api_key",
    "api_key_file",
    "schedule",
    "passes",
    "batch_size",
    "count_prompt_tokens",
}


def interpolate(value: Any, env: Mapping[str, str]) -> Any:
    if isinstance(value, str):

        def sub(m: re.Match) -> str:
            name = m.group(1)
            if name not in env:
                raise ConfigError(f"environment variable {name} is not set")
            return env[name]

        return _VAR.sub(sub, value)
    if isinstance(value, list):
        return [interpolate(v, env) for v in value]
    if isinstance(value, dict):
        return {k: interpolate(v, env) for k, v in value.items()}
    return value


def api_key_env_name(endpoint: str) -> str:
    return "TOKENJOULE_API_KEY_" + re.sub(r"[^A-Za-z0-9]", "_", endpoint).upper()


@dataclass(frozen=True)
class EndpointSection:
    name: str
    endpoint: EndpointConfig
    model: str
    gpu: str | None = None
    schedule: tuple[str, ...] = ()
    passes: int | None = None
    batch_size: int | None = None
    count_prompt_tokens: bool = False


@dataclass(frozen=True)
class ToolConfig:
    path: Path | None
    suite: Path | None
    output_dir: Path
    catalog: Path | None = None
    passes: int = 10
    batch_size: int = 8
    sampler: dict[str, Any] | None = None
    endpoints: dict[str, EndpointSection] = field(default_factory=dict)

    def endpoint(self, name: str) -> EndpointSection:
        try:
            return self.endpoints[name]
        except KeyError:
            known = ", ".join(sorted(self.endpoints)) or "none"
            raise ConfigError(f"unknown endpoint {name!r} (configured: {known})") from None

    def build_sampler(self) -> CommandSampler | ReplaySampler | None:
        if self.sampler is None:
            return None
        if "replay" in self.sampler:
            return ReplaySampler(self.sampler["replay"])
        if "command" in self.sampler:
            return CommandSampler(self.sampler["command"], float(self.sampler.get("period", DEFAULT_PERIOD)))
        raise ConfigError("sampler section needs either 'command' or 'replay'")


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value).expanduser()
    return p if p.is_absolute() else base / p


def _endpoint(name: str, raw: Mapping[str, Any], base: Path, env: Mapping[str, str]) -> EndpointSection:
    unknown = set(raw) - ENDPOINT_KEYS
    if unknown:
        raise ConfigError(f"endpoint {name!r}: unknown keys {sorted(unknown)}")
    for key in ("base_url", "model_id"):
        if key not in raw:
            raise ConfigError(f"endpoint {name!r} is missing {key!r}")
    api_key = raw.get("api_key") or env.get(api_key_env_name(name))
    if api_key is None and raw.get("api_key_file"):
        key_path = _resolve(base, raw["api_key_file"])
        if not key_path.exists():
            raise ConfigError(f"endpoint {name!r}: key file {key_path} does not exist")
        api_key = key_path.read_text(encoding="utf-8").strip()
    kwargs = {
        k: raw[k]
        for k in ("deployment_kind", "temperature", "request_timeout", "max_retries", "retry_backoff")
        if k in raw
    }
    if "seed" in raw:
        kwargs["sampling_seed"] = int(raw["seed"])
    endpoint = EndpointConfig(base_url=raw["base_url"], model_id=raw["model_id"], api_key=api_key, **kwargs)
    return EndpointSection(
        name=name,
        endpoint=endpoint,
        model=str(raw.get("model", raw["model_id"])),
        gpu=raw.get("gpu"),
        schedule=tuple(raw.get("schedule") or ()),
        passes=raw.get("passes"),
        batch_size=raw.get("batch_size"),
        count_prompt_tokens=bool(raw.get("count_prompt_tokens", False)),
    )


def load_config(path: str | Path | None, env: Mapping[str, str] | None = None) -> ToolConfig:
    """Load a config file; ``None`` yields defaults with no endpoints."""
    env = os.environ if env is None else env
    if path is None:
        return ToolConfig(path=None, suite=None, output_dir=Path("results"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    raw = interpolate(raw, env)
    base = path.parent

    suite = _resolve(base, raw.get("suite"))
    catalog = _resolve(base, raw.get("catalog"))
    for label, p in (("suite", suite), ("catalog", catalog)):
        if p is not None and not p.exists():
            raise ConfigError(f"{label} file {p} does not exist")

    sampler = raw.get("sampler")
    if sampler is not None:
        if not isinstance(sampler, dict):
            raise ConfigError("sampler must be a mapping")
        sampler = dict(sampler)
        if "replay" in sampler:
            replay = _resolve(base, sampler["replay"])
            if not replay.exists():
                raise ConfigError(f"replay trace {replay} does not exist")
            sampler["replay"] = str(replay)

    endpoints = {
        name: _endpoint(name, section or {}, base, env)
        for name, section in (raw.get("endpoints") or {}).items()
    }
    return ToolConfig(
        path=path,
        suite=suite,
        output_dir=_resolve(base, raw.get("output_dir", "results")),
        catalog=catalog,
        passes=int(raw.get("passes", 10)),
        batch_size=int(raw.get("batch_size", 8)),
        sampler=sampler,
        endpoints=endpoints,
    )
