"""shopsim: a deterministic smart-shop simulator and gateway.

Device state machines, shop physics, a layered automation policy, an
event-sourced tick loop with byte-exact replay, and a line-oriented
JSON protocol for remote monitoring and control.
"""

__version__ = "0.1.0"

from .devices import (  # noqa: F401
    Command,
    DeviceKind,
    DeviceManifest,
    DeviceState,
    apply_command,
    default_manifest,
    legal_commands,
)
from .environment import EnvParams, EnvState  # noqa: F401
from .policy import ActuatorTargets, ClimateThresholds, Layer, PolicySet, builtin_policy, climate_targets  # noqa: F401
from .runtime import Scenario, World, initial_world, replay, restore, run_scenario, snapshot, tick  # noqa: F401
