"""Discrete-time physics of the shop interior.

First-order explicit difference equations with a fixed step: wall and
window heat exchange, AC cooling, fire heating, smoke generation and
venting, a sine-shaped solar day, and battery/mains power flow.  All
update functions are pure, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .devices import DeviceKind, DeviceState

DAY_S = 86400
SUNRISE_S = 6 * 3600
SUNSET_S = 18 * 3600


class ConfigError(Exception):
    """Bad environment parameter file or unstable configuration."""


@dataclass(frozen=True)
class EnvState:
    sim_time_s: float = 0.0
    time_of_day_s: float = 0.0
    indoor_c: float = 20.0
    outdoor_c: float = 20.0
    smoke: float = 0.0
    fire_active: bool = False
    fire_suppression_s: float = 0.0
    irradiance_frac: float = 0.0
    mains_available: bool = True

    def to_json(self) -> dict[str, Any]:
        return {
            "sim_time_s": self.sim_time_s,
            "time_of_day_s": self.time_of_day_s,
            "indoor_c": self.indoor_c,
            "outdoor_c": self.outdoor_c,
            "smoke": self.smoke,
            "fire_active": self.fire_active,
            "fire_suppression_s": self.fire_suppression_s,
            "irradiance_frac": self.irradiance_frac,
            "mains_available": self.mains_available,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "EnvState":
        return cls(**doc)


@dataclass(frozen=True)
class EnvParams:
    """Tunable rates. The defaults are the model's own calibration;
    every one can be overridden from a JSON file."""

    k_leak: float = 0.002            # 1/s wall heat exchange
    k_window: float = 0.01           # 1/s at fully open windows
    fan_vent_factor: dict[str, float] = field(
        default_factory=lambda: {"Off": 1.0, "Low": 1.5, "High": 2.0}
    )
    q_ac: float = 0.02               # degC/s cooling while the AC runs
    q_fire: float = 0.05             # degC/s heating while a fire burns
    smoke_gen: float = 0.1           # 1/s per active source
    smoke_vent: float = 0.05         # 1/s at fully open windows
    smoke_decay: float = 0.01        # 1/s passive settling
    trigger_smoke: float = 0.3
    clear_smoke: float = 0.1
    extinguish_after_s: float = 30.0
    p_peak_w: float = 150.0
    battery_capacity_wh: float = 600.0
    charge_efficiency: float = 0.9
    light_load_w: float = 10.0

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float)) and value < 0:
                raise ConfigError(f"{f.name} must be >= 0, got {value}")
        if self.clear_smoke >= self.trigger_smoke:
            raise ConfigError("clear_smoke must be below trigger_smoke")

    def check_stability(self, dt_s: float) -> None:
        # Explicit Euler overshoots (indoor crosses outdoor within one
        # step) once the combined exchange rate reaches 1/dt.
        k_max = self.k_leak + self.k_window * max(self.fan_vent_factor.values())
        if dt_s * k_max >= 1.0:
            raise ConfigError(
                f"dt={dt_s}s is unstable for these exchange rates (dt*k={dt_s * k_max:.3f} >= 1)"
            )

    def to_json(self) -> dict[str, Any]:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["fan_vent_factor"] = dict(self.fan_vent_factor)
        return doc

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "EnvParams":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str) -> "EnvParams":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ConfigError("parameter file must be a JSON object")
        return cls.from_json(doc)


def thermal_update(
    indoor_c: float,
    outdoor_c: float,
    open_window_frac: float,
    max_fan_speed: str,
    ac_on: bool,
    fire_active: bool,
    dt_s: float,
    params: EnvParams,
) -> float:
    """One explicit Euler step of the indoor temperature.

    Fans only amplify window exchange; with every window shut they move
    no heat at all.
    """
    exchange = params.k_leak + params.k_window * open_window_frac * params.fan_vent_factor[max_fan_speed]
    rate = exchange * (outdoor_c - indoor_c)
    if ac_on:
        rate -= params.q_ac
    if fire_active:
        rate += params.q_fire
    return indoor_c + dt_s * rate


def smoke_update(
    smoke: float,
    sources_active: int,
    open_window_frac: float,
    dt_s: float,
    params: EnvParams,
) -> float:
    rate = (
        params.smoke_gen * sources_active
        - params.smoke_vent * open_window_frac
        - params.smoke_decay
    )
    return min(1.0, max(0.0, smoke + dt_s * rate))


def solar_output(time_of_day_s: float, params: EnvParams) -> float:
    """Panel output in watts: zero at night, a half sine between 06:00
    and 18:00 peaking at noon."""
    if not 0.0 <= time_of_day_s < DAY_S:
        raise ValueError(f"time_of_day_s out of range: {time_of_day_s}")
    if time_of_day_s < SUNRISE_S or time_of_day_s > SUNSET_S:
        return 0.0
    return params.p_peak_w * math.sin(math.pi * (time_of_day_s - SUNRISE_S) / (SUNSET_S - SUNRISE_S))


def power_step(
    battery_wh: float,
    solar_w: float,
    mains_available: bool,
    battery_loads_w: float,
    dt_s: float,
    params: EnvParams,
) -> tuple[float, float]:
    """Advance the battery and read the meter.

    The meter shows solar production.  Battery-backed loads only draw
    from the battery while mains power is out; charge is clamped to
    [0, capacity].
    """
    draw_w = 0.0 if mains_available else battery_loads_w
    delta_wh = dt_s / 3600.0 * (params.charge_efficiency * solar_w - draw_w)
    charge = min(params.battery_capacity_wh, max(0.0, battery_wh + delta_wh))
    return charge, solar_w


def detector_update(triggered: bool, smoke: float, params: EnvParams) -> bool:
    """Smoke detector with hysteresis: trips at trigger_smoke, releases
    only below clear_smoke."""
    if smoke >= params.trigger_smoke:
        return True
    if smoke < params.clear_smoke:
        return False
    return triggered


def open_window_fraction(devices: dict[str, DeviceState]) -> float:
    windows = [d for d in devices.values() if d.kind is DeviceKind.WINDOW]
    if not windows:
        return 0.0
    return sum(1 for w in windows if w.get("open")) / len(windows)


def max_fan_speed(devices: dict[str, DeviceState]) -> str:
    rank = {"Off": 0, "Low": 1, "High": 2}
    best = "Off"
    for dev in devices.values():
        if dev.kind is DeviceKind.FAN and rank[dev.get("speed")] > rank[best]:
            best = dev.get("speed")
    return best


def step_environment(
    env: EnvState,
    devices: dict[str, DeviceState],
    dt_s: float,
    params: EnvParams,
) -> EnvState:
    """Advance the clocks, fire lifecycle, temperature, smoke and solar
    irradiance by one step.

    Fire ignites the moment any fire source is active and goes out after
    extinguish_after_s of continuous sprinkler operation; the suppression
    counter resets whenever the sprinkler is off.  Detector fields on the
    devices themselves are refreshed afterwards via refresh_sensors.
    """
    if dt_s <= 0:
        raise ValueError("dt_s must be > 0")

    sim_time = env.sim_time_s + dt_s
    time_of_day = (env.time_of_day_s + dt_s) % DAY_S

    source_on = any(
        d.get("active") for d in devices.values() if d.kind is DeviceKind.FIRE_SOURCE
    )
    sprinkler_on = any(
        d.get("on") for d in devices.values() if d.kind is DeviceKind.FIRE_SPRINKLER
    )
    fire = env.fire_active or source_on
    suppression = env.fire_suppression_s
    if fire and sprinkler_on:
        suppression += dt_s
        if suppression >= params.extinguish_after_s:
            fire = False
    elif not sprinkler_on:
        suppression = 0.0

    open_frac = open_window_fraction(devices)
    fan_speed = max_fan_speed(devices)
    ac_on = any(
        d.get("on") for d in devices.values() if d.kind is DeviceKind.AIR_CONDITIONER
    )
    indoor = thermal_update(
        env.indoor_c, env.outdoor_c, open_frac, fan_speed, ac_on, fire, dt_s, params
    )

    smoke_sources = sum(
        1 for d in devices.values() if d.kind is DeviceKind.SMOKE_SOURCE and d.get("active")
    )
    if fire:
        smoke_sources += 1
    smoke = smoke_update(env.smoke, smoke_sources, open_frac, dt_s, params)

    solar_w = solar_output(time_of_day, params)
    irradiance = solar_w / params.p_peak_w if params.p_peak_w > 0 else 0.0

    return replace(
        env,
        sim_time_s=sim_time,
        time_of_day_s=time_of_day,
        indoor_c=indoor,
        smoke=smoke,
        fire_active=fire,
        fire_suppression_s=suppression,
        irradiance_frac=irradiance,
    )


def light_is_powered(
    device_id: str,
    devices: dict[str, DeviceState],
    params_by_id: dict[str, dict[str, Any]],
    env: EnvState,
) -> bool:
    """Whether a light has a live supply: mains, or its backing battery
    while mains is out.  Unbacked lights are treated as mains-wired."""
    backing = params_by_id.get(device_id, {}).get("backed_by")
    if env.mains_available or backing is None:
        return True
    return devices[backing].get("charge_wh") > 0.0


def refresh_sensors(
    env: EnvState,
    devices: dict[str, DeviceState],
    params_by_id: dict[str, dict[str, Any]],
    dt_s: float,
    params: EnvParams,
) -> dict[str, DeviceState]:
    """Write the environment back into sensor-backed device fields.

    Thermostats mirror the indoor temperature, detectors follow their
    thresholds, the solar panel/meter pair follows the sun, the battery
    integrates charge minus backed load, and a backed light starves the
    moment its battery is flat during an outage.
    """
    solar_w = solar_output(env.time_of_day_s, params)

    battery_loads = 0.0
    for dev_id, dev in devices.items():
        if dev.kind is DeviceKind.LIGHT and dev.get("on"):
            if params_by_id.get(dev_id, {}).get("backed_by") is not None:
                battery_loads += params_by_id[dev_id].get("load_w", params.light_load_w)

    updated: dict[str, DeviceState] = {}
    for dev_id, dev in devices.items():
        if dev.kind is DeviceKind.THERMOSTAT:
            updated[dev_id] = dev.replace(reading_c=env.indoor_c)
        elif dev.kind is DeviceKind.SMOKE_DETECTOR:
            updated[dev_id] = dev.replace(
                triggered=detector_update(dev.get("triggered"), env.smoke, params)
            )
        elif dev.kind is DeviceKind.FIRE_DETECTOR:
            updated[dev_id] = dev.replace(triggered=env.fire_active)
        elif dev.kind is DeviceKind.SOLAR_PANEL:
            updated[dev_id] = dev.replace(output_w=solar_w)
        elif dev.kind is DeviceKind.POWER_METER:
            updated[dev_id] = dev.replace(reading_w=solar_w)
        elif dev.kind is DeviceKind.BATTERY:
            capacity = params_by_id.get(dev_id, {}).get(
                "capacity_wh", params.battery_capacity_wh
            )
            scoped = replace(params, battery_capacity_wh=capacity)
            charge, _ = power_step(
                dev.get("charge_wh"), solar_w, env.mains_available, battery_loads, dt_s, scoped
            )
            updated[dev_id] = dev.replace(charge_wh=charge)
        else:
            updated[dev_id] = dev

    # Light supply resolution depends on fresh battery charge.
    for dev_id, dev in updated.items():
        if dev.kind is not DeviceKind.LIGHT:
            continue
        backed = params_by_id.get(dev_id, {}).get("backed_by") is not None
        source = "Battery" if (backed and not env.mains_available) else "Mains"
        on = dev.get("on")
        if on and not light_is_powered(dev_id, updated, params_by_id, env):
            on = False
        updated[dev_id] = dev.replace(on=on, source=source)

    return updated
