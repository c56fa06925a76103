"""Backend and run configuration.

Backends are configured from environment variables, one set per role::

    VQRAG_MAIN_ENDPOINT      VQRAG_MAIN_TOKEN      VQRAG_MAIN_TIMEOUT      VQRAG_MAIN_RETRIES
    VQRAG_AUX_ENDPOINT       ...
    VQRAG_ENCODER_ENDPOINT   ...
    VQRAG_DETECTOR_ENDPOINT  ...

Setting ``VQRAG_BACKEND_MODE=mock`` (or passing mock=True) swaps in the
deterministic offline backends. The run-config file is a flat ``key = value``
text format mirroring RunConfig field names; ``flags`` accepts a
comma-separated subset of meta,loc,globalq,localq.
"""

from __future__ import annotations

import os
from pathlib import Path

from .backends.http import HttpBackendConfig, HttpChatBackend, HttpDetectBackend, HttpEmbedBackend
from .backends.mock import mock_backend_set
from .backends.protocol import BackendSet
from .domain import KnowledgeFlags
from .errors import VqragError
from .pipeline import RunConfig

ROLES = ("main", "aux", "encoder", "detector")

SERVICE_TOKEN_VAR = "VQRAG_SERVICE_TOKEN"


def _role_config(role: str, env: dict[str, str]) -> HttpBackendConfig | None:
    prefix = f"VQRAG_{role.upper()}_"
    endpoint = env.get(prefix + "ENDPOINT")
    if not endpoint:
        return None
    return HttpBackendConfig(
        endpoint=endpoint,
        token=env.get(prefix + "TOKEN"),
        timeout_s=float(env.get(prefix + "TIMEOUT", "120")),
        retry_count=int(env.get(prefix + "RETRIES", "3")),
    )


def backends_from_env(env: dict[str, str] | None = None, mock: bool = False) -> BackendSet:
    env = dict(os.environ) if env is None else env
    if mock or env.get("VQRAG_BACKEND_MODE", "").lower() == "mock":
        return mock_backend_set()
    configs = {role: _role_config(role, env) for role in ROLES}
    missing = [role for role, cfg in configs.items() if cfg is None]
    if missing:
        raise VqragError(
            "backend endpoints not configured for role(s): "
            + ", ".join(missing)
            + " (set VQRAG_<ROLE>_ENDPOINT or use mock mode)"
        )
    return BackendSet(
        main=HttpChatBackend(configs["main"]),
        aux=HttpChatBackend(configs["aux"]),
        encoder=HttpEmbedBackend(configs["encoder"]),
        detector=HttpDetectBackend(configs["detector"]),
    )


def parse_config_file(path: str | Path) -> dict:
    """Flat key=value lines; '#' starts a comment; unknown keys are rejected."""
    known = set(RunConfig.model_fields)
    out: dict = {}
    for line_no, raw in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise VqragError(f"{path}:{line_no}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise VqragError(f"{path}:{line_no}: unknown config key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value: str):
    if key == "flags":
        enabled = {v.strip() for v in value.split(",") if v.strip()}
        unknown = enabled - {"meta", "loc", "globalq", "localq"}
        if unknown:
            raise VqragError(f"unknown flags: {sorted(unknown)}")
        return KnowledgeFlags(**{db: db in enabled for db in ("meta", "loc", "globalq", "localq")})
    if key == "cache_dir":
        return value
    if key in ("n_l", "main_resize", "seed"):
        return int(value)
    return float(value)


def build_run_config(
    config_file: str | Path | None = None,
    overrides: dict | None = None,
) -> RunConfig:
    """Defaults < config file < explicit overrides."""
    data: dict = {}
    if config_file:
        data.update(parse_config_file(config_file))
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return RunConfig(**data)
