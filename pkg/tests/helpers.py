"""Shared world-building helpers for the test suite."""

from __future__ import annotations

from pathlib import Path
from typing import Any

from shopsim.environment import EnvState
from shopsim.runtime import World, initial_world

REPO_ROOT = Path(__file__).resolve().parents[1]
SCENARIO_DIR = REPO_ROOT / "scenarios"
MANIFEST_FILE = REPO_ROOT / "manifests" / "paper-shop.json"


def scenario_text(name: str) -> str:
    return (SCENARIO_DIR / name).read_text(encoding="utf-8")


def make_world(
    indoor_c: float = 20.0,
    outdoor_c: float = 20.0,
    time_of_day_s: float = 0.0,
    mains_available: bool = True,
    device_fields: dict[str, dict[str, Any]] | None = None,
) -> World:
    """Default shop with the environment preset and optional per-device
    field overrides (e.g. {"door-1": {"locked": True}})."""
    world = initial_world(
        env=EnvState(
            indoor_c=indoor_c,
            outdoor_c=outdoor_c,
            time_of_day_s=time_of_day_s,
            mains_available=mains_available,
        )
    )
    for dev_id, fields in (device_fields or {}).items():
        world.devices[dev_id] = world.devices[dev_id].replace(**fields)
    return world


def device(world: World, dev_id: str):
    return world.devices[dev_id]
