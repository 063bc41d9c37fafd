"""Run-configuration file loading (zone, envelope, planner, noise sections)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import NoiseConfig
from .envelope import EnvelopeUpdateConfig
from .errors import ConfigError
from .partition import ZoneConfig
from .planner import PlannerConfig


@dataclass(frozen=True)
class RunConfig:
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    backend: str = "scripted"


def _build(cls, doc: dict, **extra):
    try:
        return cls(**doc, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {cls.__name__} section: {exc}") from exc


def load_run_config(path=None) -> RunConfig:
    """Read a config JSON file; missing sections fall back to defaults."""
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    zone_doc = dict(doc.get("zone", {}))
    if "origin" in zone_doc:
        zone_doc["origin"] = np.asarray(zone_doc["origin"], dtype=float)
    zone = _build(ZoneConfig, zone_doc)
    env = _build(EnvelopeUpdateConfig, dict(doc.get("envelope", {})))
    planner = _build(PlannerConfig, dict(doc.get("planner", {})), zone_cfg=zone, env_cfg=env)
    noise = _build(NoiseConfig, dict(doc.get("noise", {})))
    backend = doc.get("backend", "scripted")
    if backend not in ("scripted", "http"):
        raise ConfigError(f"unknown backend {backend!r}")
    return RunConfig(planner=planner, noise=noise, backend=backend)
