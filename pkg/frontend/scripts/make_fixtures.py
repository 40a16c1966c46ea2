#!/usr/bin/env python3
"""Regenerate the dashboard test fixtures from the gateway.

Usage (repo root, shopsim installed):  python3 frontend/scripts/make_fixtures.py

fig3-frames.jsonl   everything an operator session subscribed to `*`
                    receives over a truncated fire run (stops while the
                    fire is still burning, so the final banner is Fire)
expected-cctv-command.txt
                    the canonical COMMAND frame the dashboard must emit
                    for a CCTV power-on click right after that sequence
"""

from dataclasses import replace
from pathlib import Path

from shopsim.cli import parse_scenario
from shopsim.gateway import Message, encode_frame, record_session_frames
from shopsim.runtime import initial_world

REPO = Path(__file__).resolve().parents[2]
FIXTURES = REPO / "frontend" / "tests" / "fixtures"

FIXTURE_TICKS = 20  # cut the run short so the fire is still active at the end


def main() -> None:
    world = initial_world()
    scenario = parse_scenario((REPO / "scenarios" / "fig3-fire.json").read_text(), world.manifest)
    scenario = replace(scenario, duration_ticks=FIXTURE_TICKS)
    frames = record_session_frames(world, scenario)
    (FIXTURES / "fig3-frames.jsonl").write_bytes(b"".join(frames))

    # client seq: 1 = HELLO, 2 = SUBSCRIBE, so the first click sends 3;
    # ts echoes the latest server sim-clock (FIXTURE_TICKS seconds in).
    expected = encode_frame(
        Message("COMMAND", 3, FIXTURE_TICKS * 1000, {"device_id": "cctv-1", "action": "TurnOn"})
    )
    (FIXTURES / "expected-cctv-command.txt").write_bytes(expected)
    print(f"wrote {len(frames)} frames and the expected command fixture")


if __name__ == "__main__":
    main()
