"""Adapter configuration and the startup endpoint check."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import requests

from .errors import ConfigError, EndpointUnavailableError

_KNOWN_KEYS = {
    "vision_encoder",
    "text_encoder",
    "segmenter",
    "mllm_endpoint",
    "mllm_model",
    "box_threshold",
    "text_threshold",
    "prompt_template",
    "dim",
    "cache_dir",
}


@dataclass(frozen=True)
class AdapterConfig:
    """Model identifiers, grounding thresholds, reasoning endpoint, output dim."""

    vision_encoder: str = "grid16"
    text_encoder: str = "hashed-ngram"
    segmenter: str = "color-region"
    mllm_endpoint: str = "http://127.0.0.1:8080/v1"
    mllm_model: str = "toy-reasoner"
    box_threshold: float = 0.4
    text_threshold: float = 0.3
    prompt_template: str | None = None  # None -> packaged default
    dim: int = 64
    cache_dir: str | None = None

    def __post_init__(self):
        for name in ("box_threshold", "text_threshold"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if self.dim < 2:
            raise ConfigError(f"dim must be at least 2, got {self.dim}")

    @classmethod
    def from_json_file(cls, path) -> "AdapterConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("adapter config must be a JSON object")
        unknown = sorted(set(data) - _KNOWN_KEYS)
        if unknown:
            raise ConfigError(f"unknown adapter config keys: {', '.join(unknown)}")
        return cls(**data)

    def with_overrides(self, **kwargs) -> "AdapterConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def check_endpoint(config: AdapterConfig, timeout: float = 5.0) -> None:
    """Fail fast when the reasoning endpoint is unreachable.

    Any HTTP response counts as reachable; only connection-level failures
    raise.
    """
    try:
        requests.get(config.mllm_endpoint, timeout=timeout)
    except requests.RequestException as exc:
        raise EndpointUnavailableError(
            f"reasoning endpoint {config.mllm_endpoint} is unreachable: {exc}"
        ) from exc
